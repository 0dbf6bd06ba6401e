"""Second-order gradient boosted regression trees for binary targets.

One ensemble per ICD target: binary logistic objective, exact greedy
split search over every (feature, threshold) candidate, learned default
directions for missing values, and early stopping on validation AUROC.
Trees store per-node training cover so explanations can marginalize
absent features along paths.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import (
    check_binary_labels,
    check_both_classes,
    check_matrix,
    schema_fingerprint,
)
from .metrics import auroc

HESSIAN_FLOOR = 1e-16
PROBA_EPS = 1e-15
AUROC_MIN_DELTA = 1e-9
MODEL_FORMAT = "ecgdx-ensemble-v1"


def sigmoid(z):
    """Numerically stable logistic map from margin to probability."""
    z = np.asarray(z, dtype=np.float64)
    t = np.exp(-np.abs(z))
    out = np.where(z >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    return float(out) if out.ndim == 0 else out


def logistic_grad_hess(margin, label):
    """Gradient and hessian of the binary log-loss wrt the margin.

    g = p - label, h = p(1-p) floored at 1e-16 so leaf weights stay finite
    at saturated margins.
    """
    scalar = np.ndim(margin) == 0 and np.ndim(label) == 0
    p = np.asarray(sigmoid(margin), dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    g = p - y
    h = np.maximum(p * (1.0 - p), HESSIAN_FLOOR)
    if scalar:
        return float(g), float(h)
    return g, h


@dataclass
class Tree:
    """One regression tree in flat-array form.

    ``feature[i] < 0`` marks a leaf; internal nodes route ``x < threshold``
    left, missing values toward ``default_left``. ``cover`` counts training
    samples through each node; ``gain`` stores the accepted split gain.
    """

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        # children always carry larger ids than their parent (BFS build)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        """Vectorized routing of samples to their leaf node ids."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feats = self.feature[node]
            active = np.flatnonzero(feats >= 0)
            if active.size == 0:
                return node
            nid = node[active]
            v = X[active, self.feature[nid]]
            go_left = np.where(
                np.isnan(v), self.default_left[nid], v < self.threshold[nid]
            )
            node[active] = np.where(go_left, self.left[nid], self.right[nid])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def to_dict(self) -> dict:
        def build(i: int) -> dict:
            if self.feature[i] < 0:
                return {"leaf": float(self.value[i]), "cover": float(self.cover[i])}
            return {
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "default": "left" if self.default_left[i] else "right",
                "cover": float(self.cover[i]),
                "left": build(int(self.left[i])),
                "right": build(int(self.right[i])),
            }

        return build(0)

    @classmethod
    def from_dict(cls, node: dict) -> "Tree":
        feature: List[int] = []
        threshold: List[float] = []
        default_left: List[bool] = []
        left: List[int] = []
        right: List[int] = []
        value: List[float] = []
        cover: List[float] = []

        def add(d: dict) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(math.nan)
            default_left.append(True)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "cover" not in d:
                raise ValueError("tree node lacks cover metadata")
            cover.append(float(d["cover"]))
            if "leaf" in d:
                value[i] = float(d["leaf"])
            else:
                feature[i] = int(d["feature"])
                threshold[i] = float(d["threshold"])
                default_left[i] = d["default"] == "left"
                left[i] = add(d["left"])
                right[i] = add(d["right"])
            return i

        # depth-first ids do not preserve BFS order; rebuild arrays directly
        add(node)
        return cls(
            feature=np.array(feature, dtype=np.int64),
            threshold=np.array(threshold, dtype=np.float64),
            default_left=np.array(default_left, dtype=bool),
            left=np.array(left, dtype=np.int64),
            right=np.array(right, dtype=np.int64),
            value=np.array(value, dtype=np.float64),
            cover=np.array(cover, dtype=np.float64),
            gain=np.zeros(len(feature), dtype=np.float64),
        )


# ---------------------------------------------------------------------------
# Training internals
# ---------------------------------------------------------------------------

@dataclass
class _SplitChoice:
    feature: int
    threshold: float
    default_left: bool
    gain: float


def _best_split(X, g, h, order, miss, G, H, lam, gamma, mcw) -> Optional[_SplitChoice]:
    """Exact greedy search over all features and midpoint thresholds.

    Candidates sit between consecutive distinct sorted present values;
    missing samples are tried on both sides and the better one becomes the
    default direction (ties prefer left). Children below the hessian-mass
    floor are rejected. Requires strictly positive gain.
    """
    best: Optional[_SplitChoice] = None
    best_gain = 0.0
    parent_score = G * G / (H + lam)
    for f in range(len(order)):
        sidx = order[f]
        if sidx.shape[0] < 2:
            continue
        vals = X[sidx, f]
        cg = np.cumsum(g[sidx])
        ch = np.cumsum(h[sidx])
        cut = np.flatnonzero(vals[1:] > vals[:-1])
        if cut.shape[0] == 0:
            continue
        g_present = cg[-1]
        h_present = ch[-1]
        g_missing = float(g[miss[f]].sum())
        h_missing = float(h[miss[f]].sum())
        thr = 0.5 * (vals[cut] + vals[cut + 1])
        # midpoints of adjacent floats can collapse onto the left value
        thr = np.where(thr > vals[cut], thr, vals[cut + 1])
        GL = cg[cut]
        HL = ch[cut]
        GR = g_present - GL
        HR = h_present - HL
        score_l = (GL + g_missing) ** 2 / (HL + h_missing + lam) + GR**2 / (HR + lam)
        ok_l = (HL + h_missing >= mcw) & (HR >= mcw)
        score_r = GL**2 / (HL + lam) + (GR + g_missing) ** 2 / (HR + h_missing + lam)
        ok_r = (HL >= mcw) & (HR + h_missing >= mcw)
        score_l = np.where(ok_l, score_l, -np.inf)
        score_r = np.where(ok_r, score_r, -np.inf)
        take_left = score_l >= score_r
        score = np.where(take_left, score_l, score_r)
        j = int(np.argmax(score))
        if not np.isfinite(score[j]):
            continue
        gain_j = 0.5 * (score[j] - parent_score) - gamma
        if gain_j > best_gain:
            best_gain = gain_j
            best = _SplitChoice(
                feature=f,
                threshold=float(thr[j]),
                default_left=bool(take_left[j]),
                gain=float(gain_j),
            )
    return best


def _grow_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    root_rows: np.ndarray,
    root_order: List[np.ndarray],
    root_miss: List[np.ndarray],
    scratch_mark: np.ndarray,
    *,
    learning_rate: float,
    max_depth: int,
    reg_lambda: float,
    gamma: float,
    min_child_weight: float,
) -> Tuple[Tree, List[Tuple[np.ndarray, float]]]:
    """Grow one tree; returns it plus (rows, weight) pairs per leaf for the
    caller's margin update."""
    feature: List[int] = []
    threshold: List[float] = []
    default_left: List[bool] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    cover: List[float] = []
    gain: List[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        default_left.append(True)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(0.0)
        gain.append(0.0)
        return len(feature) - 1

    leaf_updates: List[Tuple[np.ndarray, float]] = []
    queue = deque()
    queue.append((new_node(), 0, root_rows, root_order, root_miss))
    while queue:
        nid, depth, rows, order, miss = queue.popleft()
        G = float(g[rows].sum())
        H = float(h[rows].sum())
        cover[nid] = float(rows.shape[0])
        choice = None
        if depth < max_depth and rows.shape[0] >= 2:
            choice = _best_split(
                X, g, h, order, miss, G, H, reg_lambda, gamma, min_child_weight
            )
        if choice is None:
            w = -G / (H + reg_lambda) * learning_rate
            value[nid] = w
            leaf_updates.append((rows, w))
            continue
        f = choice.feature
        pres = order[f]
        scratch_mark[pres] = X[pres, f] < choice.threshold
        scratch_mark[miss[f]] = choice.default_left
        in_left = scratch_mark[rows]
        lrows = rows[in_left]
        rrows = rows[~in_left]
        lorder = [o[scratch_mark[o]] for o in order]
        rorder = [o[~scratch_mark[o]] for o in order]
        lmiss = [mi[scratch_mark[mi]] for mi in miss]
        rmiss = [mi[~scratch_mark[mi]] for mi in miss]
        feature[nid] = f
        threshold[nid] = choice.threshold
        default_left[nid] = choice.default_left
        gain[nid] = choice.gain
        lid = new_node()
        rid = new_node()
        left[nid] = lid
        right[nid] = rid
        queue.append((lid, depth + 1, lrows, lorder, lmiss))
        queue.append((rid, depth + 1, rrows, rorder, rmiss))

    tree = Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        default_left=np.array(default_left, dtype=bool),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        cover=np.array(cover, dtype=np.float64),
        gain=np.array(gain, dtype=np.float64),
    )
    return tree, leaf_updates


def _presort(X: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Per-feature stable sort of present rows; missing rows kept separately."""
    order: List[np.ndarray] = []
    miss: List[np.ndarray] = []
    for f in range(X.shape[1]):
        col = X[:, f]
        nan_mask = np.isnan(col)
        srt = np.argsort(col, kind="stable")
        n_present = X.shape[0] - int(nan_mask.sum())
        order.append(srt[:n_present])
        miss.append(np.flatnonzero(nan_mask))
    return order, miss


def _logloss(y: np.ndarray, margins: np.ndarray) -> float:
    p = np.clip(sigmoid(margins), PROBA_EPS, 1.0 - PROBA_EPS)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


@dataclass
class TreeEnsemble:
    """Additive tree model for one binary target.

    margin(x) = base_margin + sum of the first ``best_iteration`` trees.
    Trees grown after the best validation round are retained in storage
    but never contribute to predictions.
    """

    base_margin: float
    trees: List[Tree]
    best_iteration: int
    feature_names: Tuple[str, ...]
    config: Dict[str, float] = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return schema_fingerprint(self.feature_names)

    def active_trees(self) -> List[Tree]:
        return self.trees[: self.best_iteration]

    def predict_margin(self, X) -> np.ndarray:
        X = check_matrix(X, len(self.feature_names))
        out = np.full(X.shape[0], self.base_margin, dtype=np.float64)
        for tree in self.active_trees():
            out += tree.predict(X)
        return out

    def predict_proba(self, X) -> np.ndarray:
        # clamp keeps probabilities strictly inside (0, 1) at saturated margins
        p = sigmoid(self.predict_margin(X))
        return np.clip(p, PROBA_EPS, 1.0 - PROBA_EPS)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "schema_fingerprint": self.fingerprint,
            "feature_names": list(self.feature_names),
            "config": dict(self.config),
            "base_margin": float(self.base_margin),
            "best_iteration": int(self.best_iteration),
            "n_trees": len(self.trees),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeEnsemble":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        names = tuple(doc["feature_names"])
        if doc.get("schema_fingerprint") != schema_fingerprint(names):
            raise ValueError("schema fingerprint does not match feature names")
        trees = [Tree.from_dict(t) for t in doc["trees"]]
        return cls(
            base_margin=float(doc["base_margin"]),
            trees=trees,
            best_iteration=int(doc["best_iteration"]),
            feature_names=names,
            config=dict(doc.get("config", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class BoostedTreesClassifier(ClassifierMixin, BaseEstimator):
    """Boosted-trees binary classifier with AUROC-based early stopping.

    Each round fits one regression tree to the logistic gradients and
    hessians, then scores the validation set; training stops once the
    validation AUROC has not improved by more than 1e-9 for ``patience``
    consecutive rounds, keeping the best round. Missing feature values
    follow per-node default directions learned during split search.

    Parameters mirror the persisted model config; ``seed`` is carried for
    reproducibility bookkeeping (training itself draws no random numbers).
    """

    def __init__(
        self,
        learning_rate: float = 0.1,
        max_depth: int = 6,
        reg_lambda: float = 1.0,
        gamma: float = 0.0,
        min_child_weight: float = 1.0,
        max_rounds: int = 1000,
        patience: int = 10,
        seed: int = 0,
    ):
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.max_rounds = max_rounds
        self.patience = patience
        self.seed = seed

    def _check_params(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("reg_lambda, gamma and min_child_weight must be >= 0")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 1 <= self.patience <= self.max_rounds:
            raise ValueError("patience must satisfy 1 <= patience <= max_rounds")

    def fit(self, X, y, eval_set=None, feature_names: Optional[Sequence[str]] = None):
        """Fit on (X, y) with early stopping against ``eval_set=(Xv, yv)``."""
        self._check_params()
        if eval_set is None:
            raise ValueError(
                "eval_set=(X_valid, y_valid) is required: early stopping "
                "monitors validation AUROC"
            )
        X = check_matrix(X, name="X")
        y = check_binary_labels(y, X.shape[0], name="y")
        check_both_classes(y, "training labels")
        Xv = check_matrix(eval_set[0], name="X_valid")
        yv = check_binary_labels(eval_set[1], Xv.shape[0], name="y_valid")
        if Xv.shape[1] != X.shape[1]:
            raise ValueError(
                f"schema mismatch: train has {X.shape[1]} features, "
                f"valid has {Xv.shape[1]}"
            )
        check_both_classes(yv, "validation labels")
        if feature_names is None:
            feature_names = tuple(f"x{i}" for i in range(X.shape[1]))
        else:
            feature_names = tuple(feature_names)
            if len(feature_names) != X.shape[1]:
                raise ValueError("feature_names length does not match X")

        n = X.shape[0]
        p0 = float(y.mean())
        base_margin = math.log(p0 / (1.0 - p0))
        root_order, root_miss = _presort(X)
        root_rows = np.arange(n, dtype=np.intp)
        scratch = np.zeros(n, dtype=bool)
        margins = np.full(n, base_margin, dtype=np.float64)
        vmargins = np.full(Xv.shape[0], base_margin, dtype=np.float64)

        trees: List[Tree] = []
        train_logloss: List[float] = []
        valid_auroc: List[float] = []
        best_auc = -math.inf
        best_iteration = 0
        rounds_since_gain = 0
        for _ in range(self.max_rounds):
            g, hess = logistic_grad_hess(margins, y)
            tree, leaf_updates = _grow_tree(
                X,
                g,
                hess,
                root_rows,
                root_order,
                root_miss,
                scratch,
                learning_rate=self.learning_rate,
                max_depth=self.max_depth,
                reg_lambda=self.reg_lambda,
                gamma=self.gamma,
                min_child_weight=self.min_child_weight,
            )
            trees.append(tree)
            for rows, w in leaf_updates:
                margins[rows] += w
            vmargins += tree.predict(Xv)
            auc = auroc(yv, vmargins)
            train_logloss.append(_logloss(y, margins))
            valid_auroc.append(auc)
            if auc > best_auc + AUROC_MIN_DELTA:
                rounds_since_gain = 0
            else:
                rounds_since_gain += 1
            if auc > best_auc:
                best_auc = auc
                best_iteration = len(trees)
            if rounds_since_gain >= self.patience:
                break

        self.ensemble_ = TreeEnsemble(
            base_margin=base_margin,
            trees=trees,
            best_iteration=best_iteration,
            feature_names=feature_names,
            config=self.get_params(),
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.best_iteration_ = best_iteration
        self.best_score_ = best_auc
        self.evals_result_ = {
            "train_logloss": train_logloss,
            "valid_auroc": valid_auroc,
        }
        return self

    def _require_fitted(self) -> TreeEnsemble:
        if not hasattr(self, "ensemble_"):
            raise ValueError("classifier is not fitted yet; call fit first")
        return self.ensemble_

    def predict_margin(self, X) -> np.ndarray:
        return self._require_fitted().predict_margin(X)

    def decision_function(self, X) -> np.ndarray:
        return self.predict_margin(X)

    def predict_proba(self, X) -> np.ndarray:
        p = self._require_fitted().predict_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self._require_fitted().predict_proba(X) >= 0.5).astype(np.int64)
