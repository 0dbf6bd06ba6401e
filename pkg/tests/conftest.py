import numpy as np
import pytest

from ecgdx.boosting import Tree, TreeEnsemble


def make_tree(feature, threshold, default_left, left, right, value, cover):
    n = len(feature)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        default_left=np.asarray(default_left, dtype=bool),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        cover=np.asarray(cover, dtype=np.float64),
        gain=np.zeros(n, dtype=np.float64),
    )


def random_tree(rng: np.random.Generator, n_features: int = 5, max_depth: int = 3) -> Tree:
    """Random binary tree with consistent covers (children sum to parent)."""
    feature, threshold, default_left = [], [], []
    left, right, value, cover = [], [], [], []

    def add_node(depth: int, node_cover: float) -> int:
        i = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        default_left.append(bool(rng.integers(2)))
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(node_cover)
        is_leaf = depth >= max_depth or node_cover < 2 or rng.random() < 0.25
        if is_leaf:
            value[i] = float(rng.normal())
        else:
            feature[i] = int(rng.integers(n_features))
            threshold[i] = float(rng.normal())
            frac = float(rng.uniform(0.2, 0.8))
            lc = max(1.0, round(node_cover * frac))
            rc = max(1.0, node_cover - lc)
            left[i] = add_node(depth + 1, lc)
            right[i] = add_node(depth + 1, rc)
        return i

    add_node(0, float(rng.integers(50, 200)))
    return make_tree(feature, threshold, default_left, left, right, value, cover)


def random_ensemble(
    rng: np.random.Generator,
    n_trees: int = 3,
    n_features: int = 5,
    max_depth: int = 3,
) -> TreeEnsemble:
    trees = [random_tree(rng, n_features, max_depth) for _ in range(n_trees)]
    return TreeEnsemble(
        base_margin=float(rng.normal()),
        trees=trees,
        best_iteration=n_trees,
        feature_names=tuple(f"x{i}" for i in range(n_features)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240803)
