"""Harmonized ECG/demographic cohort schema, CSV ingestion, descriptive
statistics, and seeded synthetic cohort generation.

A cohort row carries two demographic features (age in years, binary sex)
and eight ECG measurements (five intervals in milliseconds, three wave
axes in degrees), plus one binary label column per ICD target. ECG values
may be missing; age and sex never are. Missingness is kept explicit (NaN)
and resolved downstream by the trees' learned default directions — no
imputation happens anywhere in the package.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._validation import schema_fingerprint

FEATURE_NAMES: Tuple[str, ...] = (
    "age",
    "sex",
    "rr_ms",
    "pr_ms",
    "qrs_ms",
    "qt_ms",
    "qtc_ms",
    "p_axis_deg",
    "qrs_axis_deg",
    "t_axis_deg",
)
INTERVAL_FEATURES = ("rr_ms", "pr_ms", "qrs_ms", "qt_ms", "qtc_ms")
AXIS_FEATURES = ("p_axis_deg", "qrs_axis_deg", "t_axis_deg")
ECG_FEATURES = INTERVAL_FEATURES + AXIS_FEATURES
CONTINUOUS_FEATURES = ("age",) + ECG_FEATURES

MIN_AGE = 18.0
AXIS_MIN, AXIS_MAX = -180.0, 360.0
TARGET_COLUMN_PREFIX = "icd_"

# Location/scale marginals (median, IQR) used as synthetic-generator
# defaults; sex defaults to the matching male fraction.
DEFAULT_MARGINALS: Dict[str, Tuple[float, float]] = {
    "age": (66.0, 25.0),
    "rr_ms": (769.0, 264.0),
    "pr_ms": (158.0, 38.0),
    "qrs_ms": (94.0, 23.0),
    "qt_ms": (394.0, 68.0),
    "qtc_ms": (447.0, 47.0),
    "p_axis_deg": (51.0, 32.0),
    "qrs_axis_deg": (13.0, 61.0),
    "t_axis_deg": (42.0, 58.0),
}
DEFAULT_MALE_FRACTION = 0.515

# Hard value bounds per feature: (low, high, low_inclusive).
_BOUNDS: Dict[str, Tuple[float, float, bool]] = {"age": (MIN_AGE, math.inf, True)}
for _f in INTERVAL_FEATURES:
    _BOUNDS[_f] = (0.0, math.inf, False)
for _f in AXIS_FEATURES:
    _BOUNDS[_f] = (AXIS_MIN, AXIS_MAX, True)


class CohortError(ValueError):
    """Schema or value violations found while building a cohort.

    Carries the full list of row/column-indexed problems; the message
    shows the first few.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        shown = "; ".join(self.problems[:8])
        extra = len(self.problems) - 8
        if extra > 0:
            shown += f"; ... and {extra} more"
        super().__init__(shown)


@dataclass(frozen=True)
class FeatureSchema:
    """Fixed, ordered feature list shared by every cohort and model."""

    names: Tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if self.names != FEATURE_NAMES:
            raise ValueError(
                "feature schema is fixed to the harmonized 10-feature list"
            )

    def index(self, name: str) -> int:
        return self.names.index(name)

    def fingerprint(self) -> str:
        return schema_fingerprint(self.names)


SCHEMA = FeatureSchema()


@dataclass(frozen=True)
class Sample:
    """One cohort row: id, 10-slot feature vector (NaN = missing), labels."""

    sample_id: str
    features: np.ndarray
    labels: Dict[str, int]


def _validate_values(X: np.ndarray, y: np.ndarray, row_offset: int = 0) -> List[str]:
    """Vectorized invariant checks; returns row-indexed problem strings."""
    problems: List[str] = []

    def _report(mask: np.ndarray, column: str, what: str) -> None:
        for i in np.flatnonzero(mask)[:50]:
            problems.append(f"row {i + 1 + row_offset}, column {column}: {what}")

    age = X[:, 0]
    _report(~np.isfinite(age), "age", "must be a finite number")
    _report(np.isfinite(age) & (age < MIN_AGE), "age", f"must be >= {MIN_AGE:g}")
    sex = X[:, 1]
    _report(~((sex == 0.0) | (sex == 1.0)), "sex", "must be 0 or 1")
    for name in ECG_FEATURES:
        col = X[:, SCHEMA.index(name)]
        present = ~np.isnan(col)
        _report(np.isinf(col), name, "must be finite")
        if name in INTERVAL_FEATURES:
            _report(present & (col <= 0.0), name, "interval must be > 0")
        else:
            _report(
                present & ((col < AXIS_MIN) | (col > AXIS_MAX)),
                name,
                f"axis must lie in [{AXIS_MIN:g}, {AXIS_MAX:g}]",
            )
    bad_label = ~((y == 0) | (y == 1))
    if bad_label.any():
        rows = np.flatnonzero(bad_label.any(axis=1))[:50]
        for i in rows:
            problems.append(f"row {i + 1 + row_offset}: label must be 0 or 1")
    return problems


class Cohort:
    """Immutable sample table: ids, feature matrix, binary target matrix."""

    def __init__(
        self,
        sample_ids: Sequence[str],
        X: np.ndarray,
        y: np.ndarray,
        targets: Sequence[str],
        schema: FeatureSchema = SCHEMA,
        validate: bool = True,
    ):
        self.schema = schema
        self.sample_ids: Tuple[str, ...] = tuple(str(s) for s in sample_ids)
        self.targets: Tuple[str, ...] = tuple(targets)
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(y, dtype=np.int8))
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        n = len(self.sample_ids)
        if X.shape != (n, len(schema.names)):
            raise CohortError(
                [f"feature matrix has shape {X.shape}, expected {(n, len(schema.names))}"]
            )
        if y.shape != (n, len(self.targets)):
            raise CohortError(
                [f"label matrix has shape {y.shape}, expected {(n, len(self.targets))}"]
            )
        if len(set(self.sample_ids)) != n:
            raise CohortError(["sample_ids are not unique"])
        if len(set(self.targets)) != len(self.targets):
            raise CohortError(["target codes are not unique"])
        if validate:
            problems = _validate_values(X, y)
            if problems:
                raise CohortError(problems)
        X.flags.writeable = False
        y.flags.writeable = False
        self.X = X
        self.y = y

    def __len__(self) -> int:
        return len(self.sample_ids)

    def target_index(self, target: str) -> int:
        try:
            return self.targets.index(target)
        except ValueError:
            raise KeyError(f"unknown target {target!r}") from None

    def labels(self, target: str) -> np.ndarray:
        return self.y[:, self.target_index(target)]

    def sample(self, i: int) -> Sample:
        return Sample(
            sample_id=self.sample_ids[i],
            features=self.X[i].copy(),
            labels={t: int(self.y[i, k]) for k, t in enumerate(self.targets)},
        )

    def subset(self, rows: np.ndarray) -> "Cohort":
        rows = np.asarray(rows, dtype=np.intp)
        ids = [self.sample_ids[i] for i in rows]
        return Cohort(
            ids, self.X[rows], self.y[rows], self.targets, self.schema, validate=False
        )


def sniff_targets(path) -> List[str]:
    """Read only the header and return the ICD codes it carries."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise CohortError(["file is empty"])
    return [
        c[len(TARGET_COLUMN_PREFIX):]
        for c in header
        if c.startswith(TARGET_COLUMN_PREFIX)
    ]


def load_cohort(path, targets: Sequence[str], schema: FeatureSchema = SCHEMA) -> Cohort:
    """Read and validate a cohort CSV.

    The file must carry the canonical header (sample_id + the 10 features,
    in order) followed by one ``icd_<CODE>`` column per target; extra icd_
    columns are permitted and ignored. Empty ECG cells mark missing values.
    All violations are collected and raised together as a CohortError with
    row/column diagnostics (rows are 1-based, header excluded).
    """
    path = Path(path)
    targets = list(targets)
    expected = ("sample_id",) + schema.names
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CohortError(["file is empty"])
        header = [c.strip() for c in header]
        if tuple(header[: len(expected)]) != expected:
            raise CohortError(
                [
                    "malformed header: first columns must be "
                    + ",".join(expected)
                    + f" (got {','.join(header[: len(expected)])})"
                ]
            )
        rest = header[len(expected):]
        problems: List[str] = []
        for c in rest:
            if not c.startswith(TARGET_COLUMN_PREFIX) or len(c) <= len(TARGET_COLUMN_PREFIX):
                problems.append(f"malformed header: unexpected column {c!r}")
        if len(set(rest)) != len(rest):
            problems.append("malformed header: duplicate target columns")
        target_pos: Dict[str, int] = {}
        for t in targets:
            col = TARGET_COLUMN_PREFIX + t
            if col not in rest:
                problems.append(f"malformed header: missing required column {col}")
            else:
                target_pos[t] = len(expected) + rest.index(col)
        if problems:
            raise CohortError(problems)

        n_cols = len(header)
        ids: List[str] = []
        seen_ids: set = set()
        feat_rows: List[List[float]] = []
        label_rows: List[List[int]] = []
        for r, row in enumerate(reader, start=1):
            if len(row) != n_cols:
                problems.append(f"row {r}: expected {n_cols} cells, got {len(row)}")
                continue
            sid = row[0].strip()
            ok = True
            if not sid:
                problems.append(f"row {r}, column sample_id: must be non-empty")
                ok = False
            elif sid in seen_ids:
                problems.append(f"row {r}, column sample_id: duplicate id {sid!r}")
                ok = False
            feats = [math.nan] * len(schema.names)
            for j, name in enumerate(schema.names):
                cell = row[1 + j].strip()
                if cell == "":
                    if name in ("age", "sex"):
                        problems.append(f"row {r}, column {name}: value is required")
                        ok = False
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    problems.append(f"row {r}, column {name}: non-numeric value {cell!r}")
                    ok = False
                    continue
                issue = _check_value(name, v)
                if issue is not None:
                    problems.append(f"row {r}, column {name}: {issue}")
                    ok = False
                else:
                    feats[j] = v
            labels = [0] * len(targets)
            for k, t in enumerate(targets):
                cell = row[target_pos[t]].strip()
                if cell not in ("0", "1"):
                    problems.append(
                        f"row {r}, column {TARGET_COLUMN_PREFIX + t}: "
                        f"label must be 0 or 1, got {cell!r}"
                    )
                    ok = False
                else:
                    labels[k] = int(cell)
            if ok:
                seen_ids.add(sid)
                ids.append(sid)
                feat_rows.append(feats)
                label_rows.append(labels)
            if len(problems) > 1000:
                break

    if problems:
        raise CohortError(problems)
    if not ids:
        raise CohortError(["file has a header but no data rows"])
    X = np.array(feat_rows, dtype=np.float64)
    y = np.array(label_rows, dtype=np.int8).reshape(len(ids), len(targets))
    return Cohort(ids, X, y, targets, schema, validate=False)


def _check_value(name: str, v: float) -> Optional[str]:
    """Bound check for one parsed cell; None when the value is admissible."""
    if name == "sex":
        return None if v in (0.0, 1.0) else "must be 0 or 1"
    if not math.isfinite(v):
        return "must be a finite number"
    if name == "age":
        return None if v >= MIN_AGE else f"must be >= {MIN_AGE:g}"
    if name in INTERVAL_FEATURES:
        return None if v > 0.0 else "interval must be > 0"
    lo, hi, _ = _BOUNDS[name]
    if lo <= v <= hi:
        return None
    return f"axis must lie in [{lo:g}, {hi:g}]"


def _format_value(v: float, name: str) -> str:
    if np.isnan(v):
        return ""
    if name == "sex":
        return str(int(v))
    return repr(float(v))


def write_cohort(cohort: Cohort, path) -> Path:
    """Write a cohort back to the canonical CSV layout (deterministic bytes)."""
    path = Path(path)
    header = ["sample_id", *cohort.schema.names] + [
        TARGET_COLUMN_PREFIX + t for t in cohort.targets
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, sid in enumerate(cohort.sample_ids):
            row = [sid]
            row += [
                _format_value(cohort.X[i, j], name)
                for j, name in enumerate(cohort.schema.names)
            ]
            row += [str(int(v)) for v in cohort.y[i]]
            writer.writerow(row)
    return path


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureStat:
    name: str
    median: float
    iqr: float
    n_present: int
    n_missing: int


@dataclass(frozen=True)
class DescriptiveStats:
    """Cohort overview: per-feature median/IQR, sex mix, age quartiles."""

    features: Tuple[FeatureStat, ...]
    sex_counts: Dict[int, int]
    sex_percent: Dict[int, float]
    age_bin_edges: Tuple[float, float, float, float, float]
    age_bin_percent: Tuple[float, float, float, float]
    n: int

    def feature(self, name: str) -> FeatureStat:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)


def age_quartile_bins(ages: np.ndarray) -> Tuple[np.ndarray, Tuple[float, ...]]:
    """Assign each age to one of four cohort-specific quartile bins."""
    ages = np.asarray(ages, dtype=np.float64)
    cuts = np.quantile(ages, [0.25, 0.5, 0.75])
    bins = np.searchsorted(cuts, ages, side="right")
    edges = (float(ages.min()), *(float(c) for c in cuts), float(ages.max()))
    return bins, edges


def descriptive_stats(cohort: Cohort) -> DescriptiveStats:
    """Median (lower interpolation) and IQR (linear-quartile Q3-Q1) per
    continuous feature, sex counts, and age quartile occupancy.

    Missing values are excluded feature by feature; the result does not
    depend on sample order.
    """
    n = len(cohort)
    if n == 0:
        raise ValueError("cohort is empty")
    stats: List[FeatureStat] = []
    for name in CONTINUOUS_FEATURES:
        col = cohort.X[:, cohort.schema.index(name)]
        present = col[~np.isnan(col)]
        if present.size:
            med = float(np.quantile(present, 0.5, method="lower"))
            q1, q3 = np.quantile(present, [0.25, 0.75])
            iqr = float(q3 - q1)
        else:
            med, iqr = math.nan, math.nan
        stats.append(FeatureStat(name, med, iqr, int(present.size), int(n - present.size)))
    sex = cohort.X[:, cohort.schema.index("sex")]
    n_male = int((sex == 1.0).sum())
    sex_counts = {0: n - n_male, 1: n_male}
    sex_percent = {k: 100.0 * v / n for k, v in sex_counts.items()}
    bins, edges = age_quartile_bins(cohort.X[:, cohort.schema.index("age")])
    occupancy = np.bincount(bins, minlength=4) / n * 100.0
    return DescriptiveStats(
        features=tuple(stats),
        sex_counts=sex_counts,
        sex_percent=sex_percent,
        age_bin_edges=edges,
        age_bin_percent=tuple(float(v) for v in occupancy),
        n=n,
    )


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------

_LN3 = math.log(3.0)


@dataclass(frozen=True)
class PlantedEffect:
    """A directed association between one feature and one target."""

    feature: str
    direction: int  # +1 or -1
    strength: float


@dataclass
class SynthSpec:
    """Parameters for a seeded synthetic cohort with planted label effects.

    Continuous features follow logistic location-scale marginals matched
    to (median, IQR) and truncated to the schema's hard bounds. Labels are
    Bernoulli under a logistic model whose log-odds sum the planted
    effects over standardized features, with the intercept calibrated by
    bisection so the expected prevalence matches the request.
    """

    n_samples: int
    seed: int = 0
    marginals: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    male_fraction: float = DEFAULT_MALE_FRACTION
    missing_rate: Dict[str, float] = field(default_factory=dict)
    prevalence: Dict[str, float] = field(default_factory=dict)
    effects: Dict[str, List[PlantedEffect]] = field(default_factory=dict)

    @property
    def targets(self) -> Tuple[str, ...]:
        return tuple(self.prevalence.keys())

    def marginal(self, name: str) -> Tuple[float, float]:
        return self.marginals.get(name, DEFAULT_MARGINALS[name])

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 < self.male_fraction < 1.0:
            raise ValueError("male_fraction must lie in (0, 1)")
        for name, (med, iqr) in self.marginals.items():
            if name not in CONTINUOUS_FEATURES:
                raise ValueError(f"unknown marginal feature {name!r}")
            if not (math.isfinite(med) and math.isfinite(iqr) and iqr >= 0):
                raise ValueError(f"marginal for {name!r} must be finite with IQR >= 0")
        for name, rate in self.missing_rate.items():
            if name not in ECG_FEATURES:
                raise ValueError(f"missing_rate only applies to ECG features, got {name!r}")
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"missing_rate for {name!r} must lie in [0, 1)")
        for target, p in self.prevalence.items():
            if not 0.0 < p < 1.0:
                raise ValueError(f"prevalence for {target!r} must lie in (0, 1)")
        for target, effs in self.effects.items():
            if target not in self.prevalence:
                raise ValueError(f"effects given for unknown target {target!r}")
            for e in effs:
                if e.feature not in FEATURE_NAMES:
                    raise ValueError(f"unknown effect feature {e.feature!r}")
                if e.direction not in (-1, 1):
                    raise ValueError("effect direction must be +1 or -1")
                if not (math.isfinite(e.strength) and e.strength >= 0):
                    raise ValueError("effect strength must be finite and >= 0")


def _sigmoid_arr(z: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))


def _logistic_cdf(v: float, loc: float, s: float) -> float:
    if math.isinf(v):
        return 1.0 if v > 0 else 0.0
    z = (v - loc) / s
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _truncated_logistic(u: np.ndarray, median: float, iqr: float,
                        lo: float, hi: float) -> np.ndarray:
    s = iqr / (2.0 * _LN3)
    if s == 0.0:
        return np.full_like(u, median)
    flo = _logistic_cdf(lo, median, s)
    fhi = _logistic_cdf(hi, median, s)
    uu = flo + u * (fhi - flo)
    uu = np.maximum(uu, np.nextafter(flo, 1.0))  # keep the open lower bound
    return median + s * np.log(uu / (1.0 - uu))


def _calibrate_intercept(eta: np.ndarray, target_prevalence: float) -> float:
    """Bisect the intercept so the mean Bernoulli probability hits the target."""
    lo, hi = -40.0, 40.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if float(_sigmoid_arr(mid + eta).mean()) < target_prevalence:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _standardized(spec: SynthSpec, X: np.ndarray, feature: str) -> np.ndarray:
    j = SCHEMA.index(feature)
    col = X[:, j]
    if feature == "sex":
        mf = spec.male_fraction
        z = (col - mf) / math.sqrt(mf * (1.0 - mf))
    else:
        med, iqr = spec.marginal(feature)
        s = iqr / (2.0 * _LN3)
        z = np.zeros_like(col) if s == 0.0 else (col - med) / s
    return np.where(np.isnan(col), 0.0, z)  # missing carries no signal


def generate_synth(spec: SynthSpec) -> Cohort:
    """Draw a cohort from a SynthSpec; the seed fully determines the output."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    X = np.empty((n, len(FEATURE_NAMES)), dtype=np.float64)
    X[:, SCHEMA.index("sex")] = (rng.random(n) < spec.male_fraction).astype(np.float64)
    for name in CONTINUOUS_FEATURES:
        med, iqr = spec.marginal(name)
        lo, hi, _ = _BOUNDS[name]
        X[:, SCHEMA.index(name)] = _truncated_logistic(rng.random(n), med, iqr, lo, hi)
    for name in ECG_FEATURES:
        rate = spec.missing_rate.get(name, 0.0)
        if rate > 0.0:
            X[rng.random(n) < rate, SCHEMA.index(name)] = np.nan

    y = np.zeros((n, len(spec.targets)), dtype=np.int8)
    for k, target in enumerate(spec.targets):
        eta = np.zeros(n, dtype=np.float64)
        for eff in spec.effects.get(target, []):
            eta += eff.direction * eff.strength * _standardized(spec, X, eff.feature)
        intercept = _calibrate_intercept(eta, spec.prevalence[target])
        y[:, k] = rng.random(n) < _sigmoid_arr(intercept + eta)

    ids = [f"S{i + 1:07d}" for i in range(n)]
    return Cohort(ids, X, y, spec.targets)
