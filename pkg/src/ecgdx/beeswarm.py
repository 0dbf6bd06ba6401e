"""Beeswarm summary figures: one dot per (feature, sample) at its
attribution value, colored by the underlying feature value, rendered as a
standalone deterministic SVG."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .cohort import Cohort
from .explain import Explanation
from .metrics import midranks

N_BINS = 64
MAX_OFFSET = 0.45  # in row-height units; stays under half the row
COLOR_LOW = (0, 139, 251)
COLOR_HIGH = (255, 0, 81)
COLOR_MISSING = (119, 119, 119)


@dataclass(frozen=True)
class BeeswarmRow:
    feature: str
    mean_abs: float
    x: np.ndarray        # attribution values
    offset: np.ndarray   # vertical jitter, |offset| <= MAX_OFFSET
    color: np.ndarray    # 0..1 scalar per point
    missing: np.ndarray  # True where the feature value was missing


@dataclass(frozen=True)
class BeeswarmLayout:
    """Rows ordered by descending mean |phi| (ties fall back to schema order)."""

    rows: Tuple[BeeswarmRow, ...]
    n_samples: int


def _color_scalars(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Percentile-rank color in [0, 1], values clipped at the 1st/99th
    percentiles; missing values flagged for the sentinel color."""
    missing = np.isnan(values)
    color = np.full(values.shape[0], 0.5, dtype=np.float64)
    present = ~missing
    k = int(present.sum())
    if k > 1:
        vals = values[present]
        lo, hi = np.quantile(vals, [0.01, 0.99])
        clipped = np.clip(vals, lo, hi)
        ranks = midranks(clipped)
        if ranks.max() > ranks.min():
            color[present] = (ranks - ranks.min()) / (ranks.max() - ranks.min())
    return color, missing


def _jitter(x: np.ndarray) -> np.ndarray:
    """Deterministic histogram packing: points sharing an x-bin stack
    outward around the row centerline."""
    n = x.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi > lo:
        bins = np.minimum(((x - lo) / (hi - lo) * N_BINS).astype(np.int64), N_BINS - 1)
    else:
        bins = np.zeros(n, dtype=np.int64)
    order = np.argsort(bins, kind="stable")
    sorted_bins = bins[order]
    boundaries = np.flatnonzero(sorted_bins[1:] != sorted_bins[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    counts = np.diff(np.concatenate((starts, [n])))
    within = np.arange(n) - np.repeat(starts, counts)
    units = ((within + 1) // 2) * np.where(within % 2 == 1, 1, -1)
    max_units = int(np.abs(units).max())
    scale = MAX_OFFSET / max(1, max_units)
    offsets = np.empty(n, dtype=np.float64)
    offsets[order] = units * scale
    return offsets


def beeswarm_layout(explanations: Sequence[Explanation], cohort: Cohort) -> BeeswarmLayout:
    """Lay out one row per feature from aligned explanations and cohort."""
    if len(explanations) == 0:
        raise ValueError("no explanations to lay out")
    if len(explanations) != len(cohort):
        raise ValueError(
            f"{len(explanations)} explanations for {len(cohort)} cohort samples"
        )
    names = cohort.schema.names
    phi = np.vstack([e.phi for e in explanations])
    if phi.shape[1] != len(names):
        raise ValueError("explanations do not match the cohort schema")
    mean_abs = np.abs(phi).mean(axis=0)
    row_order = sorted(range(len(names)), key=lambda j: (-mean_abs[j], j))
    rows: List[BeeswarmRow] = []
    for j in row_order:
        color, missing = _color_scalars(cohort.X[:, j])
        rows.append(
            BeeswarmRow(
                feature=names[j],
                mean_abs=float(mean_abs[j]),
                x=phi[:, j].copy(),
                offset=_jitter(phi[:, j]),
                color=color,
                missing=missing,
            )
        )
    return BeeswarmLayout(rows=tuple(rows), n_samples=len(explanations))


def _hex_color(scalar: float) -> str:
    r = round(COLOR_LOW[0] + (COLOR_HIGH[0] - COLOR_LOW[0]) * scalar)
    g = round(COLOR_LOW[1] + (COLOR_HIGH[1] - COLOR_LOW[1]) * scalar)
    b = round(COLOR_LOW[2] + (COLOR_HIGH[2] - COLOR_LOW[2]) * scalar)
    return f"#{r:02x}{g:02x}{b:02x}"


_MISSING_HEX = f"#{COLOR_MISSING[0]:02x}{COLOR_MISSING[1]:02x}{COLOR_MISSING[2]:02x}"

LEFT, RIGHT, TOP, BOTTOM = 150.0, 30.0, 24.0, 50.0
PLOT_W = 640.0
ROW_H = 32.0


def render_svg(layout: BeeswarmLayout, path) -> Path:
    """Write a standalone SVG 1.1 beeswarm; byte output is fixed by the layout."""
    rows = layout.rows
    n_rows = len(rows)
    plot_h = max(ROW_H, ROW_H * n_rows)
    width = LEFT + PLOT_W + RIGHT
    height = TOP + plot_h + BOTTOM

    if n_rows and any(r.x.size for r in rows):
        xs = np.concatenate([r.x for r in rows])
        x_min = min(float(xs.min()), 0.0)
        x_max = max(float(xs.max()), 0.0)
    else:
        x_min, x_max = -1.0, 1.0
    span = x_max - x_min
    pad = 0.05 * span if span > 0 else 0.5
    x_min -= pad
    x_max += pad

    def sx(v: float) -> float:
        return LEFT + (v - x_min) / (x_max - x_min) * PLOT_W

    parts: List[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">'
    )
    parts.append(f'<rect width="{width:.0f}" height="{height:.0f}" fill="#ffffff"/>')
    axis_y = TOP + plot_h
    # zero reference line
    parts.append(
        f'<line x1="{sx(0.0):.2f}" y1="{TOP:.2f}" x2="{sx(0.0):.2f}" '
        f'y2="{axis_y:.2f}" stroke="#cccccc" stroke-width="1"/>'
    )
    for k, row in enumerate(rows):
        cy0 = TOP + (k + 0.5) * ROW_H
        parts.append(
            f'<text x="{LEFT - 8:.2f}" y="{cy0 + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12">{row.feature}</text>'
        )
        for i in range(row.x.shape[0]):
            fill = _MISSING_HEX if row.missing[i] else _hex_color(float(row.color[i]))
            cy = cy0 - row.offset[i] * ROW_H
            parts.append(
                f'<circle cx="{sx(float(row.x[i])):.2f}" cy="{cy:.2f}" '
                f'r="2.2" fill="{fill}" fill-opacity="0.8"/>'
            )
    # x axis with min / zero / max ticks
    parts.append(
        f'<line x1="{LEFT:.2f}" y1="{axis_y:.2f}" x2="{LEFT + PLOT_W:.2f}" '
        f'y2="{axis_y:.2f}" stroke="#333333" stroke-width="1"/>'
    )
    ticks = sorted({round(x_min + pad, 6), 0.0, round(x_max - pad, 6)})
    for t in ticks:
        parts.append(
            f'<line x1="{sx(t):.2f}" y1="{axis_y:.2f}" x2="{sx(t):.2f}" '
            f'y2="{axis_y + 4:.2f}" stroke="#333333" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{sx(t):.2f}" y="{axis_y + 18:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{t:.2f}</text>'
        )
    parts.append(
        f'<text x="{LEFT + PLOT_W / 2:.2f}" y="{axis_y + 36:.2f}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f"SHAP value</text>"
    )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path
