"""Flat ``key = value`` config files with dotted keys.

The format is deliberately minimal: one assignment per line, ``#``
comments, blank lines ignored. Dotted keys reach into sub-configs, e.g.
``gbm.max_depth = 6`` overrides a training hyperparameter and
``prevalence.G30 = 0.02`` sets a synthetic target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .cohort import ECG_FEATURES, CONTINUOUS_FEATURES, PlantedEffect, SynthSpec


class ConfigError(ValueError):
    pass


def parse_kv_file(path) -> Dict[str, str]:
    """Parse a flat key=value file; duplicate keys are rejected."""
    out: Dict[str, str] = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path.name}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path.name}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path.name}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


# gbm.* override types match BoostedTreesClassifier parameters
_GBM_INT_KEYS = {"max_depth", "max_rounds", "patience", "seed"}
_GBM_FLOAT_KEYS = {"learning_rate", "reg_lambda", "gamma", "min_child_weight"}


@dataclass
class RunConfig:
    """Everything ``ecgdx run`` needs for a full pipeline run."""

    internal_csv: Path
    targets: List[str]
    external_csv: Optional[Path] = None
    seed: int = 0
    out: Path = Path("ecgdx_run")
    auroc_floor: float = 0.7
    jobs: int = 1
    force: bool = False
    bootstrap_iterations: int = 1000
    gbm: Dict[str, float] = field(default_factory=dict)
    groups: Dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.targets:
            raise ConfigError("targets must be non-empty")
        if len(set(self.targets)) != len(self.targets):
            raise ConfigError("targets contain duplicates")
        if not 0.5 <= self.auroc_floor < 1.0:
            raise ConfigError("auroc_floor must lie in [0.5, 1)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.bootstrap_iterations < 1:
            raise ConfigError("bootstrap_iterations must be >= 1")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    mapping = parse_kv_file(path)
    base = path.parent

    def take(key: str) -> Optional[str]:
        return mapping.pop(key, None)

    internal = take("internal_csv")
    if internal is None:
        raise ConfigError("internal_csv is required")
    targets_raw = take("targets")
    if targets_raw is None:
        raise ConfigError("targets is required")
    targets = [t.strip() for t in targets_raw.split(",") if t.strip()]
    cfg = RunConfig(internal_csv=(base / internal).resolve(), targets=targets)
    external = take("external_csv")
    if external is not None:
        cfg.external_csv = (base / external).resolve()
    if (v := take("seed")) is not None:
        cfg.seed = _as_int("seed", v)
    if (v := take("out")) is not None:
        cfg.out = Path(v)
    if (v := take("auroc_floor")) is not None:
        cfg.auroc_floor = _as_float("auroc_floor", v)
    if (v := take("jobs")) is not None:
        cfg.jobs = _as_int("jobs", v)
    if (v := take("bootstrap_iterations")) is not None:
        cfg.bootstrap_iterations = _as_int("bootstrap_iterations", v)
    for key in list(mapping):
        if key.startswith("gbm."):
            name = key[len("gbm."):]
            value = mapping.pop(key)
            if name in _GBM_INT_KEYS:
                cfg.gbm[name] = _as_int(key, value)
            elif name in _GBM_FLOAT_KEYS:
                cfg.gbm[name] = _as_float(key, value)
            else:
                raise ConfigError(f"unknown training override {key!r}")
        elif key.startswith("group."):
            cfg.groups[key[len("group."):]] = mapping.pop(key)
    if mapping:
        raise ConfigError(f"unknown config key {next(iter(mapping))!r}")
    cfg.validate()
    return cfg


def _parse_effects(key: str, value: str) -> List[PlantedEffect]:
    effects = []
    for chunk in value.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3 or parts[1] not in ("+", "-"):
            raise ConfigError(
                f"{key}: expected 'feature:+:strength' entries, got {chunk!r}"
            )
        effects.append(
            PlantedEffect(
                feature=parts[0].strip(),
                direction=1 if parts[1] == "+" else -1,
                strength=_as_float(key, parts[2]),
            )
        )
    return effects


def build_synth_spec(mapping: Dict[str, str]) -> SynthSpec:
    """Build a SynthSpec from parsed key=value pairs.

    Keys: n_samples, seed, male_fraction, marginal.<feature> = median,iqr,
    missing.<feature> = rate, prevalence.<CODE> = p,
    effect.<CODE> = feature:+:strength[, ...].
    """
    mapping = dict(mapping)
    if "n_samples" not in mapping:
        raise ConfigError("n_samples is required")
    spec = SynthSpec(n_samples=_as_int("n_samples", mapping.pop("n_samples")))
    if (v := mapping.pop("seed", None)) is not None:
        spec.seed = _as_int("seed", v)
    if (v := mapping.pop("male_fraction", None)) is not None:
        spec.male_fraction = _as_float("male_fraction", v)
    for key in list(mapping):
        value = mapping.pop(key)
        if key.startswith("marginal."):
            name = key[len("marginal."):]
            if name not in CONTINUOUS_FEATURES:
                raise ConfigError(f"{key}: unknown feature")
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 2:
                raise ConfigError(f"{key}: expected 'median,iqr'")
            spec.marginals[name] = (_as_float(key, parts[0]), _as_float(key, parts[1]))
        elif key.startswith("missing."):
            name = key[len("missing."):]
            if name not in ECG_FEATURES:
                raise ConfigError(f"{key}: missing rates apply to ECG features only")
            spec.missing_rate[name] = _as_float(key, value)
        elif key.startswith("prevalence."):
            spec.prevalence[key[len("prevalence."):]] = _as_float(key, value)
        elif key.startswith("effect."):
            spec.effects[key[len("effect."):]] = _parse_effects(key, value)
        else:
            raise ConfigError(f"unknown synth key {key!r}")
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec


def load_synth_spec(path) -> SynthSpec:
    return build_synth_spec(parse_kv_file(path))
