"""Per-sample additive feature attributions for tree ensembles.

``TreeExplainer`` computes exact Shapley values under the path-dependent
game: features in the coalition follow the sample down each tree (missing
values take the node's default direction), absent features distribute
over children proportionally to training cover. ``brute_force_shap_values``
evaluates the same game by subset enumeration and serves as the
independent oracle for the fast path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ._treepath import shap_dataset
from ._validation import check_matrix
from .boosting import Tree, TreeEnsemble
from .cohort import Cohort

LOCAL_ACCURACY_TOL = 1e-9


@dataclass(frozen=True)
class Explanation:
    """Additive attribution: base_value + phi.sum() equals the margin."""

    base_value: float
    phi: np.ndarray
    margin: float
    sample_id: Optional[str] = None

    def local_accuracy_gap(self) -> float:
        return abs(self.base_value + float(self.phi.sum()) - self.margin)


def _unwrap(model) -> TreeEnsemble:
    ensemble = getattr(model, "ensemble_", model)
    if not isinstance(ensemble, TreeEnsemble):
        raise TypeError(
            "expected a TreeEnsemble or a fitted BoostedTreesClassifier"
        )
    return ensemble


def _tree_expectations(tree: Tree) -> np.ndarray:
    """Cover-weighted downward expectation per node (leaf value at leaves)."""
    expect = tree.value.astype(np.float64).copy()
    # children always carry larger ids than their parent
    for i in range(tree.n_nodes - 1, -1, -1):
        if tree.feature[i] >= 0:
            l, r = tree.left[i], tree.right[i]
            expect[i] = (
                tree.cover[l] * expect[l] + tree.cover[r] * expect[r]
            ) / tree.cover[i]
    return expect


class TreeExplainer:
    """Exact path-dependent Shapley attributions for a trained ensemble.

    Only the trees retained by early stopping contribute, matching
    ``predict_margin``. Requires per-node training cover recorded at fit
    time (always present on models trained by this package).
    """

    def __init__(self, model):
        ensemble = _unwrap(model)
        trees = ensemble.active_trees()
        for t in trees:
            if t.cover.shape[0] != t.n_nodes or (t.cover <= 0).any():
                raise ValueError("ensemble lacks positive cover metadata")
        self.ensemble = ensemble
        self.n_features = len(ensemble.feature_names)

        roots = []
        left, right, feature, threshold, default_left = [], [], [], [], []
        expect, cover = [], []
        offset = 0
        max_depth = 0
        for t in trees:
            roots.append(offset)
            shift = np.where(t.left >= 0, t.left + offset, -1)
            left.append(shift)
            shift = np.where(t.right >= 0, t.right + offset, -1)
            right.append(shift)
            feature.append(t.feature)
            threshold.append(t.threshold)
            default_left.append(t.default_left.astype(np.uint8))
            expect.append(_tree_expectations(t))
            cover.append(t.cover.astype(np.float64))
            offset += t.n_nodes
            max_depth = max(max_depth, t.max_depth())
        if trees:
            self._roots = np.array(roots, dtype=np.int64)
            self._left = np.concatenate(left).astype(np.int64)
            self._right = np.concatenate(right).astype(np.int64)
            self._feature = np.concatenate(feature).astype(np.int64)
            self._threshold = np.concatenate(threshold).astype(np.float64)
            self._default_left = np.concatenate(default_left)
            self._expect = np.concatenate(expect)
            self._cover = np.concatenate(cover)
        else:
            self._roots = np.empty(0, dtype=np.int64)
        self._buf_len = (max_depth + 3) * (max_depth + 4) // 2 + 4
        self._stack_len = max_depth + 8
        self.base_value = ensemble.base_margin + sum(
            float(_tree_expectations(t)[0]) for t in trees
        )

    def shap_values(self, X) -> np.ndarray:
        """Attribution matrix (n_samples, n_features) in margin space."""
        X = check_matrix(X, self.n_features)
        if not X.flags.writeable:  # the jit kernel signature requires writable
            X = X.copy()
        phi = np.zeros((X.shape[0], self.n_features), dtype=np.float64)
        if self._roots.shape[0]:
            shap_dataset(
                self._roots,
                self._left,
                self._right,
                self._feature,
                self._threshold,
                self._default_left,
                self._expect,
                self._cover,
                X,
                phi,
                self._buf_len,
                self._stack_len,
            )
        return phi

    def explain(self, X, sample_ids: Optional[Sequence[str]] = None) -> List[Explanation]:
        X = check_matrix(X, self.n_features)
        if sample_ids is not None and len(sample_ids) != X.shape[0]:
            raise ValueError("sample_ids length does not match X")
        phi = self.shap_values(X)
        margins = self.ensemble.predict_margin(X)
        return [
            Explanation(
                base_value=self.base_value,
                phi=phi[i],
                margin=float(margins[i]),
                sample_id=None if sample_ids is None else str(sample_ids[i]),
            )
            for i in range(X.shape[0])
        ]


def explain_cohort(model, cohort: Cohort) -> List[Explanation]:
    """Explain every cohort sample, preserving order."""
    ensemble = _unwrap(model)
    if tuple(ensemble.feature_names) != cohort.schema.names:
        raise ValueError("model schema does not match cohort schema")
    return TreeExplainer(ensemble).explain(cohort.X, cohort.sample_ids)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def _expvalue(tree: Tree, x: np.ndarray, subset_mask: int) -> float:
    """Path-dependent expectation of one tree given a feature coalition."""
    total = 0.0
    stack = [(0, 1.0)]
    while stack:
        node, w = stack.pop()
        f = int(tree.feature[node])
        if f < 0:
            total += w * float(tree.value[node])
            continue
        if (subset_mask >> f) & 1:
            xv = x[f]
            if math.isnan(xv):
                nxt = tree.left[node] if tree.default_left[node] else tree.right[node]
            elif xv < tree.threshold[node]:
                nxt = tree.left[node]
            else:
                nxt = tree.right[node]
            stack.append((int(nxt), w))
        else:
            c = float(tree.cover[node])
            l, r = int(tree.left[node]), int(tree.right[node])
            stack.append((l, w * float(tree.cover[l]) / c))
            stack.append((r, w * float(tree.cover[r]) / c))
    return total


def brute_force_shap_values(model, x) -> Explanation:
    """Shapley values of the path-dependent game by subset enumeration.

    Exponential in the feature count (capped at 15); used to validate
    TreeExplainer on small ensembles.
    """
    ensemble = _unwrap(model)
    m = len(ensemble.feature_names)
    if m > 15:
        raise ValueError(f"subset enumeration supports at most 15 features, got {m}")
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != m:
        raise ValueError(f"sample has {x.shape[0]} features, expected {m}")
    trees = ensemble.active_trees()
    n_subsets = 1 << m
    v = np.empty(n_subsets, dtype=np.float64)
    for mask in range(n_subsets):
        total = ensemble.base_margin
        for t in trees:
            total += _expvalue(t, x, mask)
        v[mask] = total
    fact = [math.factorial(k) for k in range(m + 1)]
    weight = [fact[s] * fact[m - s - 1] / fact[m] for s in range(m)]
    phi = np.zeros(m, dtype=np.float64)
    for i in range(m):
        bit = 1 << i
        for mask in range(n_subsets):
            if mask & bit:
                continue
            phi[i] += weight[mask.bit_count()] * (v[mask | bit] - v[mask])
    return Explanation(
        base_value=float(v[0]), phi=phi, margin=float(v[n_subsets - 1])
    )


def write_explanations_csv(path, explanations: Sequence[Explanation],
                           feature_names: Sequence[str]) -> Path:
    """Deterministic CSV export: sample_id, one phi column per feature,
    base_value, margin."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["sample_id"]
            + [f"phi_{name}" for name in feature_names]
            + ["base_value", "margin"]
        )
        for i, e in enumerate(explanations):
            sid = e.sample_id if e.sample_id is not None else str(i)
            writer.writerow(
                [sid]
                + [repr(float(p)) for p in e.phi]
                + [repr(float(e.base_value)), repr(float(e.margin))]
            )
    return path
