"""AUROC with midrank tie handling, seeded percentile bootstrap intervals,
prevalence, and report assembly (Markdown + CSV)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ._validation import check_both_classes

INTERNAL = "internal"
EXTERNAL = "external"
_DATASET_ORDER = {INTERNAL: 0, EXTERNAL: 1}
PERFORMANCE_HEADER = "AUROC (95% CI) [Prev.]"


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    values = np.asarray(values)
    n = values.shape[0]
    order = np.argsort(values, kind="mergesort")
    svals = values[order]
    boundaries = np.flatnonzero(svals[1:] != svals[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    group_rank = (starts + ends - 1) / 2.0 + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def auroc(y_true, y_score) -> float:
    """Probability a random positive outranks a random negative (ties half).

    Computed with one sort via the rank-sum identity; exactly equals the
    brute-force count over all positive-negative pairs, ties included.
    """
    y = np.asarray(y_true, dtype=np.float64).ravel()
    s = np.asarray(y_score, dtype=np.float64).ravel()
    if y.shape[0] != s.shape[0]:
        raise ValueError(f"length mismatch: {y.shape[0]} labels vs {s.shape[0]} scores")
    if y.shape[0] == 0:
        raise ValueError("empty input")
    if not ((y == 0) | (y == 1)).all():
        raise ValueError("labels must be 0/1")
    check_both_classes(y, "labels")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    n_pos = float(y.sum())
    n_neg = float(y.shape[0] - n_pos)
    ranks = midranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)


def prevalence(y_true) -> float:
    """Fraction of positive labels."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    if y.shape[0] == 0:
        raise ValueError("empty input")
    if not ((y == 0) | (y == 1)).all():
        raise ValueError("labels must be 0/1")
    return float(y.mean())


def bootstrap_auroc_ci(
    y_true,
    y_score,
    iterations: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
) -> Tuple[float, float]:
    """Seeded percentile bootstrap interval for the AUROC.

    Each iteration resamples n indices with replacement; single-class
    resamples are redrawn so exactly ``iterations`` valid statistics
    contribute. Gives up after 10x ``iterations`` total draws.
    """
    y = np.asarray(y_true, dtype=np.float64).ravel()
    s = np.asarray(y_score, dtype=np.float64).ravel()
    check_both_classes(y, "labels")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = y.shape[0]
    rng = np.random.default_rng(seed)
    stats = np.empty(iterations, dtype=np.float64)
    done = 0
    attempts = 0
    while done < iterations:
        attempts += 1
        if attempts > 10 * iterations:
            raise RuntimeError(
                f"could not draw {iterations} two-class resamples "
                f"within {10 * iterations} attempts"
            )
        idx = rng.integers(0, n, size=n)
        ys = y[idx]
        if ys.min() == ys.max():
            continue
        stats[done] = auroc(ys, s[idx])
        done += 1
    lo, hi = np.percentile(stats, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    """One target evaluated on one dataset."""

    target: str
    dataset: str  # "internal" or "external"
    auroc: float
    ci_low: float
    ci_high: float
    prevalence: float
    n: int

    def __post_init__(self):
        if self.dataset not in _DATASET_ORDER:
            raise ValueError(f"dataset must be one of {tuple(_DATASET_ORDER)}")
        if not 0.0 <= self.auroc <= 1.0:
            raise ValueError("auroc must lie in [0, 1]")
        if not 0.0 <= self.ci_low <= self.ci_high <= 1.0:
            raise ValueError("require 0 <= ci_low <= ci_high <= 1")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie in (0, 1)")
        if self.n <= 0:
            raise ValueError("n must be positive")


def format_performance_cell(auroc_value: float, ci_low: float, ci_high: float,
                            prev: float) -> str:
    """Render 'AUROC (CI low, CI high) [prevalence%]' at report precision."""
    return f"{auroc_value:.4f} ({ci_low:.4f}, {ci_high:.4f}) [{prev:.2%}]"


@dataclass(frozen=True)
class ReportTable:
    """Grouped per-target performance table, renderable as Markdown or CSV."""

    rows: Tuple[Tuple[str, str, Dict[str, MetricReport]], ...]  # (group, code, by-dataset)
    warnings: Tuple[str, ...]

    def to_markdown(self) -> str:
        lines = [
            f"| Code | Internal {PERFORMANCE_HEADER} | External {PERFORMANCE_HEADER} |",
            "| --- | --- | --- |",
        ]
        current_group = None
        for group, code, by_dataset in self.rows:
            if group != current_group:
                lines.append(f"| **{group}** |  |  |")
                current_group = group
            cells = []
            for dataset in (INTERNAL, EXTERNAL):
                r = by_dataset.get(dataset)
                cells.append(
                    format_performance_cell(r.auroc, r.ci_low, r.ci_high, r.prevalence)
                    if r is not None
                    else "-"
                )
            lines.append(f"| {code} | {cells[0]} | {cells[1]} |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["group,code,dataset,auroc,ci_low,ci_high,prevalence,n"]
        for group, code, by_dataset in self.rows:
            for dataset in (INTERNAL, EXTERNAL):
                r = by_dataset.get(dataset)
                if r is None:
                    continue
                lines.append(
                    f"{group},{code},{dataset},{r.auroc!r},{r.ci_low!r},"
                    f"{r.ci_high!r},{r.prevalence!r},{r.n}"
                )
        return "\n".join(lines) + "\n"


def report_table(
    reports: Sequence[MetricReport],
    grouping: Optional[Dict[str, str]] = None,
) -> ReportTable:
    """Assemble reports into a table grouped by condition family.

    Rows sort by group name then code; duplicate (target, dataset) pairs
    are rejected. A point estimate outside its own interval only raises a
    warning (recorded on the table and emitted via ``warnings.warn``).
    """
    grouping = grouping or {}
    seen = set()
    by_code: Dict[Tuple[str, str], Dict[str, MetricReport]] = {}
    warn_lines: List[str] = []
    for r in reports:
        key = (r.target, r.dataset)
        if key in seen:
            raise ValueError(f"duplicate report for target {r.target!r} on {r.dataset}")
        seen.add(key)
        group = grouping.get(r.target, "Targets")
        by_code.setdefault((group, r.target), {})[r.dataset] = r
        if not (r.ci_low <= r.auroc <= r.ci_high):
            msg = (
                f"{r.target}/{r.dataset}: AUROC {r.auroc:.4f} lies outside its "
                f"interval ({r.ci_low:.4f}, {r.ci_high:.4f})"
            )
            warn_lines.append(msg)
            warnings.warn(msg)
    rows = tuple(
        (group, code, by_code[(group, code)])
        for group, code in sorted(by_code.keys())
    )
    return ReportTable(rows=rows, warnings=tuple(warn_lines))
