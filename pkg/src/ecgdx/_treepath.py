"""Numba kernels for exact path-dependent tree Shapley attribution.

The traversal keeps, per path, one entry per unique feature with its
"one fraction" (did the sample follow every split on the feature) and
"zero fraction" (product of cover ratios when the feature is absent),
extending and unwinding a permutation-weight polynomial as it descends.
Repeated features along a path are unwound and re-extended with the
product of their fractions, which keeps the computation exact.

The descent is an explicit-stack depth-first walk. Each level works in
its own window of four shared flat buffers, addressed by explicit
offsets; windows of popped siblings are rebuilt from the parent window,
which descendants never touch.
"""

import numba
import numpy as np

@numba.njit(inline="always", fastmath=True, error_model="numpy")
def _unwind(fidx, zf, of, pw, off, udepth, path_index):
    ofrac = of[off + path_index]
    zfrac = zf[off + path_index]
    next_one = pw[off + udepth]
    for i in range(udepth - 1, -1, -1):
        if ofrac != 0.0:
            tmp = pw[off + i]
            pw[off + i] = next_one * (udepth + 1.0) / ((i + 1.0) * ofrac)
            next_one = tmp - pw[off + i] * zfrac * (udepth - i) / (udepth + 1.0)
        else:
            pw[off + i] = pw[off + i] * (udepth + 1.0) / (zfrac * (udepth - i))
    for i in range(path_index, udepth):
        fidx[off + i] = fidx[off + i + 1]
        zf[off + i] = zf[off + i + 1]
        of[off + i] = of[off + i + 1]


@numba.njit(inline="always", fastmath=True, error_model="numpy")
def _unwound_sum(fidx, zf, of, pw, off, udepth, path_index):
    ofrac = of[off + path_index]
    zfrac = zf[off + path_index]
    next_one = pw[off + udepth]
    total = 0.0
    for i in range(udepth - 1, -1, -1):
        if ofrac != 0.0:
            tmp = next_one * (udepth + 1.0) / ((i + 1.0) * ofrac)
            total += tmp
            next_one = pw[off + i] - tmp * zfrac * (udepth - i) / (udepth + 1.0)
        else:
            total += pw[off + i] / zfrac / ((udepth - i) / (udepth + 1.0))
    return total


@numba.njit(
    "void(int64, int64[:], int64[:], int64[:], float64[:], uint8[:], "
    "float64[:], float64[:], float64[:], float64[:], int64[:], float64[:], "
    "float64[:], float64[:], int64[:], float64[:])",
    cache=True,
    fastmath=True,
    error_model="numpy",
)
def _shap_one_tree(
    root, left, right, feature, threshold, default_left, expect, cover,
    x, phi, fidx, zf, of, pw, istack, fstack,
):
    """Attribute one tree's margin over the features of one sample.

    istack rows hold (node, udepth, off, parent_off, pfindex); fstack rows
    hold (pzfrac, pofrac).
    """
    sp = 0
    istack[0] = root
    istack[1] = 0
    istack[2] = 0
    istack[3] = 0
    istack[4] = -1
    fstack[0] = 1.0
    fstack[1] = 1.0
    sp = 1
    while sp > 0:
        sp -= 1
        node = istack[5 * sp]
        udepth = istack[5 * sp + 1]
        off = istack[5 * sp + 2]
        parent_off = istack[5 * sp + 3]
        pfindex = istack[5 * sp + 4]
        pzfrac = fstack[2 * sp]
        pofrac = fstack[2 * sp + 1]

        # materialize this level's window: copy the parent path, then
        # extend it with the incoming fractions
        for k in range(udepth):
            fidx[off + k] = fidx[parent_off + k]
            zf[off + k] = zf[parent_off + k]
            of[off + k] = of[parent_off + k]
            pw[off + k] = pw[parent_off + k]
        fidx[off + udepth] = pfindex
        zf[off + udepth] = pzfrac
        of[off + udepth] = pofrac
        pw[off + udepth] = 1.0 if udepth == 0 else 0.0
        for i in range(udepth - 1, -1, -1):
            pw[off + i + 1] += pofrac * pw[off + i] * (i + 1.0) / (udepth + 1.0)
            pw[off + i] = pzfrac * pw[off + i] * (udepth - i) / (udepth + 1.0)

        if left[node] < 0:
            leaf_value = expect[node]
            for i in range(1, udepth + 1):
                w = _unwound_sum(fidx, zf, of, pw, off, udepth, i)
                phi[fidx[off + i]] += w * (of[off + i] - zf[off + i]) * leaf_value
            continue

        f = feature[node]
        xv = x[f]
        if np.isnan(xv):
            hot = left[node] if default_left[node] != 0 else right[node]
        elif xv < threshold[node]:
            hot = left[node]
        else:
            hot = right[node]
        cold = right[node] if hot == left[node] else left[node]
        hot_zfrac = cover[hot] / cover[node]
        cold_zfrac = cover[cold] / cover[node]
        izfrac = 1.0
        iofrac = 1.0

        # a feature already on the path gets unwound and re-extended with
        # the product of its fractions (one player, possibly many splits)
        child_off = off + udepth + 1
        path_index = 0
        while path_index <= udepth:
            if fidx[off + path_index] == f:
                break
            path_index += 1
        if path_index != udepth + 1:
            izfrac = zf[off + path_index]
            iofrac = of[off + path_index]
            _unwind(fidx, zf, of, pw, off, udepth, path_index)
            udepth -= 1

        # push cold first so the hot branch is walked next (LIFO)
        istack[5 * sp] = cold
        istack[5 * sp + 1] = udepth + 1
        istack[5 * sp + 2] = child_off
        istack[5 * sp + 3] = off
        istack[5 * sp + 4] = f
        fstack[2 * sp] = cold_zfrac * izfrac
        fstack[2 * sp + 1] = 0.0
        sp += 1
        istack[5 * sp] = hot
        istack[5 * sp + 1] = udepth + 1
        istack[5 * sp + 2] = child_off
        istack[5 * sp + 3] = off
        istack[5 * sp + 4] = f
        fstack[2 * sp] = hot_zfrac * izfrac
        fstack[2 * sp + 1] = iofrac
        sp += 1
    return


@numba.njit(
    "void(int64[:], int64[:], int64[:], int64[:], float64[:], uint8[:], "
    "float64[:], float64[:], float64[:, :], float64[:, :], int64, int64)",
    cache=True,
    parallel=True,
)
def shap_dataset(
    roots, left, right, feature, threshold, default_left, expect, cover,
    X, phi_out, buf_len, stack_len,
):
    """Accumulate per-sample attributions over all trees into phi_out."""
    n = X.shape[0]
    for i in numba.prange(n):
        fidx = np.empty(buf_len, dtype=np.int64)
        zf = np.empty(buf_len, dtype=np.float64)
        of = np.empty(buf_len, dtype=np.float64)
        pw = np.empty(buf_len, dtype=np.float64)
        istack = np.empty(5 * stack_len, dtype=np.int64)
        fstack = np.empty(2 * stack_len, dtype=np.float64)
        x = X[i]
        phi = phi_out[i]
        for t in range(roots.shape[0]):
            _shap_one_tree(
                roots[t], left, right, feature, threshold, default_left,
                expect, cover, x, phi, fidx, zf, of, pw, istack, fstack,
            )
