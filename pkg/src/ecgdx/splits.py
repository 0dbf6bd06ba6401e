"""Deterministic stratified 20-fold partition (18 train / 1 validation / 1 test).

Folds are balanced over pseudo-labels: one per ICD target (positive
samples), one per cohort-specific age quartile, and one per sex value.
Assignment follows greedy iterative stratification: the rarest pending
pseudo-label is processed first, each of its samples going to the fold
with the greatest remaining need for that label; ties fall back to the
fold with the fewest assigned samples, then to a seeded uniform draw.

Determinism holds for a fixed row order and seed. Permuting cohort rows
reaches the seeded tie-break in a different order, so assignments may
legitimately differ between row permutations of the same data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from .cohort import Cohort, age_quartile_bins

N_FOLDS = 20
VALIDATION_FOLD = 18
TEST_FOLD = 19
ROLE_TRAIN = "train"
ROLE_VALIDATION = "validation"
ROLE_TEST = "test"
ROLES = (ROLE_TRAIN, ROLE_VALIDATION, ROLE_TEST)

_ROLE_FOLDS: Dict[str, Tuple[int, ...]] = {
    ROLE_TRAIN: tuple(range(VALIDATION_FOLD)),
    ROLE_VALIDATION: (VALIDATION_FOLD,),
    ROLE_TEST: (TEST_FOLD,),
}


def role_of_fold(fold: int) -> str:
    if fold == VALIDATION_FOLD:
        return ROLE_VALIDATION
    if fold == TEST_FOLD:
        return ROLE_TEST
    if 0 <= fold < VALIDATION_FOLD:
        return ROLE_TRAIN
    raise ValueError(f"fold index {fold} out of range")


@dataclass(frozen=True)
class FoldAssignment:
    """Seeded map from sample_id to one of 20 folds.

    Targets with at least 20 positives that still ended up with an empty
    fold are listed in ``unsplittable``.
    """

    fold_of: Mapping[str, int]
    seed: int
    unsplittable: Tuple[str, ...] = field(default=())

    def folds_for(self, role: str) -> Tuple[int, ...]:
        if role not in _ROLE_FOLDS:
            raise ValueError(f"unknown role {role!r}; expected one of {ROLES}")
        return _ROLE_FOLDS[role]


def _pseudo_labels(cohort: Cohort) -> np.ndarray:
    """Boolean matrix (n, L): target positives, age quartiles, sex values."""
    cols = [cohort.y[:, k] == 1 for k in range(len(cohort.targets))]
    ages = cohort.X[:, cohort.schema.index("age")]
    bins, _ = age_quartile_bins(ages)
    cols.extend(bins == b for b in range(4))
    sex = cohort.X[:, cohort.schema.index("sex")]
    cols.append(sex == 0.0)
    cols.append(sex == 1.0)
    return np.column_stack(cols)


def stratified_split(cohort: Cohort, seed: int = 0) -> FoldAssignment:
    """Greedy iterative stratification of a cohort into 20 folds."""
    n = len(cohort)
    if n == 0:
        raise ValueError("cohort is empty")
    pseudo = _pseudo_labels(cohort)
    totals = pseudo.sum(axis=0)
    # Remaining per-fold need for each pseudo-label (fractional quotas).
    need = np.repeat(totals[:, None] / N_FOLDS, N_FOLDS, axis=1).astype(np.float64)
    assigned_count = np.zeros(N_FOLDS, dtype=np.int64)
    fold_idx = np.full(n, -1, dtype=np.int64)
    unassigned = np.ones(n, dtype=bool)
    rng = np.random.default_rng(seed)

    while unassigned.any():
        remaining = pseudo[unassigned].sum(axis=0)
        candidates = np.flatnonzero(remaining > 0)
        label = candidates[np.argmin(remaining[candidates])]
        rows = np.flatnonzero(unassigned & pseudo[:, label])
        label_need = need[label]
        for i in rows:
            best = label_need.max()
            tied = np.flatnonzero(label_need == best)
            if tied.size > 1:
                counts = assigned_count[tied]
                tied = tied[counts == counts.min()]
            if tied.size > 1:
                f = int(tied[rng.integers(tied.size)])
            else:
                f = int(tied[0])
            fold_idx[i] = f
            unassigned[i] = False
            assigned_count[f] += 1
            need[pseudo[i], f] -= 1.0

    unsplittable = []
    for k, target in enumerate(cohort.targets):
        pos = np.flatnonzero(cohort.y[:, k] == 1)
        if pos.size >= N_FOLDS:
            per_fold = np.bincount(fold_idx[pos], minlength=N_FOLDS)
            if (per_fold == 0).any():
                unsplittable.append(target)

    fold_of = {sid: int(f) for sid, f in zip(cohort.sample_ids, fold_idx)}
    return FoldAssignment(fold_of=fold_of, seed=seed, unsplittable=tuple(unsplittable))


def _fold_array(cohort: Cohort, assignment: FoldAssignment) -> np.ndarray:
    fold_of = assignment.fold_of
    missing = [sid for sid in cohort.sample_ids if sid not in fold_of]
    if missing:
        raise ValueError(
            f"assignment does not cover {len(missing)} cohort sample(s), "
            f"e.g. {missing[0]!r}"
        )
    if len(fold_of) != len(cohort):
        extra = set(fold_of) - set(cohort.sample_ids)
        raise ValueError(
            f"assignment references {len(extra)} unknown sample_id(s), "
            f"e.g. {next(iter(sorted(extra)))!r}"
        )
    return np.fromiter((fold_of[sid] for sid in cohort.sample_ids), dtype=np.int64)


def materialize(cohort: Cohort, assignment: FoldAssignment, role: str) -> Cohort:
    """Extract the sub-cohort for a role, preserving original row order."""
    folds = assignment.folds_for(role)
    fold_arr = _fold_array(cohort, assignment)
    rows = np.flatnonzero(np.isin(fold_arr, folds))
    return cohort.subset(rows)


def export_folds(cohort: Cohort, assignment: FoldAssignment, path) -> Path:
    """Write the audit sidecar CSV: sample_id, fold, role."""
    fold_arr = _fold_array(cohort, assignment)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "fold", "role"])
        for sid, f in zip(cohort.sample_ids, fold_arr):
            writer.writerow([sid, int(f), role_of_fold(int(f))])
    return path
