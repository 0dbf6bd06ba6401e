"""Array and label validation helpers shared across the package."""

from __future__ import annotations

import hashlib
from typing import Iterable, Optional

import numpy as np


def check_matrix(X, n_features: Optional[int] = None, name: str = "X") -> np.ndarray:
    """Coerce to a C-contiguous float64 matrix; NaN marks a missing value.

    A 1-d input is treated as a single sample. Infinities are rejected,
    NaN is allowed (missing marker).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(
            f"{name} has {X.shape[1]} features, expected {n_features}"
        )
    if np.isinf(X).any():
        raise ValueError(f"{name} contains infinite values")
    return np.ascontiguousarray(X)


def check_binary_labels(y, n: Optional[int] = None, name: str = "y") -> np.ndarray:
    """Coerce to a float64 vector of 0/1 labels."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name} has length {y.shape[0]}, expected {n}")
    bad = ~((y == 0.0) | (y == 1.0))
    if bad.any():
        raise ValueError(f"{name} must contain only 0/1 values")
    return y


def check_both_classes(y: np.ndarray, name: str = "y") -> None:
    if y.size == 0 or y.min() == y.max():
        raise ValueError(f"{name} must contain both classes")


def schema_fingerprint(names: Iterable[str]) -> str:
    """Short stable digest of an ordered feature-name list."""
    joined = ",".join(names)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]
