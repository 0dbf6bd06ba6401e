"""Command-line pipeline: run / synth / stats / split / explain.

``run`` drives the full study for each configured ICD target: stratified
18:1:1 split of the internal cohort, boosted-tree training with AUROC
early stopping, evaluation on the internal test fold and (optionally) a
full external cohort, Shapley explanations of the internal test fold, and
report/figure emission. Targets fail independently; the exit code is 0
when all succeed, 2 on partial failure, 1 when nothing succeeds or the
config is invalid.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .beeswarm import beeswarm_layout, render_svg
from .boosting import BoostedTreesClassifier
from .cohort import (
    Cohort,
    CohortError,
    descriptive_stats,
    generate_synth,
    load_cohort,
    sniff_targets,
    write_cohort,
)
from .config import ConfigError, RunConfig, load_run_config, load_synth_spec
from .explain import TreeEnsemble, explain_cohort, write_explanations_csv
from .metrics import (
    EXTERNAL,
    INTERNAL,
    MetricReport,
    auroc,
    bootstrap_auroc_ci,
    prevalence,
    report_table,
)
from .splits import (
    ROLE_TEST,
    ROLE_TRAIN,
    ROLE_VALIDATION,
    export_folds,
    materialize,
    stratified_split,
)

log = logging.getLogger("ecgdx")

EXIT_OK = 0
EXIT_TOTAL_FAILURE = 1
EXIT_PARTIAL_FAILURE = 2


def _derived_seed(base: int, *key: int) -> int:
    return int(np.random.SeedSequence((base, *key)).generate_state(1)[0])


def _target_paths(out: Path, target: str) -> Dict[str, Path]:
    return {
        "model": out / f"model_{target}.json",
        "log": out / f"train_{target}.log",
        "explanations": out / f"explanations_{target}_{INTERNAL}.csv",
        "beeswarm": out / f"beeswarm_{target}_{INTERNAL}.svg",
    }


def _check_overwrite(paths: List[Path], force: bool) -> None:
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        raise ConfigError(
            f"refusing to overwrite {existing[0]} (and {len(existing) - 1} more); "
            "pass --force to allow"
        )


def _run_target(
    target: str,
    index: int,
    folds: Tuple[Cohort, Cohort, Cohort],
    external: Optional[Cohort],
    cfg: RunConfig,
) -> Tuple[str, List[MetricReport], Optional[str]]:
    """Train, evaluate and explain one target; never raises."""
    try:
        train_c, valid_c, test_c = folds
        paths = _target_paths(cfg.out, target)
        params = dict(cfg.gbm)
        params.setdefault("seed", _derived_seed(cfg.seed, index, 2))
        clf = BoostedTreesClassifier(**params)
        clf.fit(
            train_c.X,
            train_c.labels(target),
            eval_set=(valid_c.X, valid_c.labels(target)),
            feature_names=train_c.schema.names,
        )
        ensemble = clf.ensemble_
        ensemble.save(paths["model"])
        with open(paths["log"], "w", encoding="utf-8") as fh:
            fh.write("round,train_logloss,valid_auroc\n")
            for r, (tl, va) in enumerate(
                zip(
                    clf.evals_result_["train_logloss"],
                    clf.evals_result_["valid_auroc"],
                ),
                start=1,
            ):
                fh.write(f"{r},{tl!r},{va!r}\n")

        reports = []
        y_test = test_c.labels(target)
        scores = ensemble.predict_margin(test_c.X)
        ci = bootstrap_auroc_ci(
            y_test,
            scores,
            iterations=cfg.bootstrap_iterations,
            seed=_derived_seed(cfg.seed, index, 0),
        )
        reports.append(
            MetricReport(
                target=target,
                dataset=INTERNAL,
                auroc=auroc(y_test, scores),
                ci_low=ci[0],
                ci_high=ci[1],
                prevalence=prevalence(y_test),
                n=len(test_c),
            )
        )
        if external is not None:
            y_ext = external.labels(target)
            ext_scores = ensemble.predict_margin(external.X)
            ci = bootstrap_auroc_ci(
                y_ext,
                ext_scores,
                iterations=cfg.bootstrap_iterations,
                seed=_derived_seed(cfg.seed, index, 1),
            )
            reports.append(
                MetricReport(
                    target=target,
                    dataset=EXTERNAL,
                    auroc=auroc(y_ext, ext_scores),
                    ci_low=ci[0],
                    ci_high=ci[1],
                    prevalence=prevalence(y_ext),
                    n=len(external),
                )
            )

        explanations = explain_cohort(ensemble, test_c)
        write_explanations_csv(paths["explanations"], explanations, test_c.schema.names)
        render_svg(beeswarm_layout(explanations, test_c), paths["beeswarm"])
        return target, reports, None
    except Exception as exc:  # per-target isolation: other targets proceed
        return target, [], f"{type(exc).__name__}: {exc}"


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = Path(args.out)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    cfg.force = bool(args.force)
    cfg.validate()
    cfg.out.mkdir(parents=True, exist_ok=True)

    failures: Dict[str, str] = {}
    available = sniff_targets(cfg.internal_csv)
    usable = [t for t in cfg.targets if t in available]
    for t in cfg.targets:
        if t not in available:
            failures[t] = f"internal cohort lacks column icd_{t}"
    if cfg.external_csv is not None:
        ext_available = sniff_targets(cfg.external_csv)
        for t in list(usable):
            if t not in ext_available:
                failures[t] = f"external cohort lacks column icd_{t}"
                usable.remove(t)

    shared = [
        cfg.out / "report.csv",
        cfg.out / "report.md",
        cfg.out / "summary.json",
        cfg.out / f"folds_{INTERNAL}.csv",
    ]
    per_target = [p for t in usable for p in _target_paths(cfg.out, t).values()]
    _check_overwrite(shared + per_target, cfg.force)

    if not usable:
        log.error("no usable targets; aborting")
        _write_summary(cfg, {}, failures)
        return EXIT_TOTAL_FAILURE

    log.info("loading internal cohort %s", cfg.internal_csv)
    internal = load_cohort(cfg.internal_csv, usable)
    external = None
    if cfg.external_csv is not None:
        log.info("loading external cohort %s", cfg.external_csv)
        external = load_cohort(cfg.external_csv, usable)

    log.info("splitting internal cohort (seed %d)", cfg.seed)
    assignment = stratified_split(internal, seed=cfg.seed)
    for t in assignment.unsplittable:
        log.warning("target %s is unsplittable: some fold has no positives", t)
    export_folds(internal, assignment, cfg.out / f"folds_{INTERNAL}.csv")
    folds = (
        materialize(internal, assignment, ROLE_TRAIN),
        materialize(internal, assignment, ROLE_VALIDATION),
        materialize(internal, assignment, ROLE_TEST),
    )
    log.info(
        "fold sizes: train=%d validation=%d test=%d",
        len(folds[0]),
        len(folds[1]),
        len(folds[2]),
    )

    indexed = [(t, i) for i, t in enumerate(cfg.targets) if t in usable]
    results: Dict[str, Tuple[List[MetricReport], Optional[str]]] = {}
    if cfg.jobs > 1 and len(indexed) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {
                pool.submit(_run_target, t, i, folds, external, cfg): t
                for t, i in indexed
            }
            for fut in concurrent.futures.as_completed(futures):
                target, reports, error = fut.result()
                results[target] = (reports, error)
    else:
        for t, i in indexed:
            log.info("training target %s", t)
            target, reports, error = _run_target(t, i, folds, external, cfg)
            results[target] = (reports, error)

    all_reports: List[MetricReport] = []
    for t, _ in indexed:
        reports, error = results[t]
        if error is not None:
            failures[t] = error
            log.error("target %s failed: %s", t, error)
        else:
            all_reports.extend(reports)

    if all_reports:
        table = report_table(all_reports, cfg.groups)
        (cfg.out / "report.csv").write_text(table.to_csv(), encoding="utf-8")
        (cfg.out / "report.md").write_text(table.to_markdown(), encoding="utf-8")
        for w in table.warnings:
            log.warning("%s", w)

    summary = _write_summary(cfg, {t: r for t, (r, e) in results.items() if e is None}, failures)
    for line in summary["display"]:
        log.info("%s", line)

    if failures and len(failures) == len(cfg.targets):
        return EXIT_TOTAL_FAILURE
    if failures:
        return EXIT_PARTIAL_FAILURE
    return EXIT_OK


def _write_summary(
    cfg: RunConfig,
    reports_by_target: Dict[str, List[MetricReport]],
    failures: Dict[str, str],
) -> dict:
    targets = {}
    passing = []
    display = []
    for t in cfg.targets:
        if t in failures:
            targets[t] = {"error": failures[t]}
            display.append(f"target {t}: FAILED ({failures[t]})")
            continue
        by_ds = {r.dataset: r for r in reports_by_target.get(t, [])}
        internal_auc = by_ds[INTERNAL].auroc if INTERNAL in by_ds else None
        external_auc = by_ds[EXTERNAL].auroc if EXTERNAL in by_ds else None
        passed = internal_auc is not None and internal_auc > cfg.auroc_floor
        if cfg.external_csv is not None:
            passed = passed and external_auc is not None and external_auc > cfg.auroc_floor
        targets[t] = {
            "internal_auroc": internal_auc,
            "external_auroc": external_auc,
            "passed": passed,
        }
        if passed:
            passing.append(t)
        ext_s = f" external={external_auc:.4f}" if external_auc is not None else ""
        display.append(
            f"target {t}: internal={internal_auc:.4f}{ext_s} "
            f"{'PASS' if passed else 'BELOW FLOOR'} (floor {cfg.auroc_floor:g})"
        )
    summary = {
        "auroc_floor": cfg.auroc_floor,
        "seed": cfg.seed,
        "targets": targets,
        "passing": passing,
    }
    (cfg.out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    summary["display"] = display
    return summary


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    _check_overwrite([out], args.force)
    cohort = generate_synth(spec)
    write_cohort(cohort, out)
    log.info("wrote %d samples to %s", len(cohort), out)
    return EXIT_OK


def cmd_stats(args) -> int:
    targets = sniff_targets(args.csv)
    cohort = load_cohort(args.csv, targets)
    stats = descriptive_stats(cohort)
    print(f"n = {stats.n}")
    print("sex: female {0} ({1:.2f}%), male {2} ({3:.2f}%)".format(
        stats.sex_counts[0], stats.sex_percent[0],
        stats.sex_counts[1], stats.sex_percent[1],
    ))
    edges = stats.age_bin_edges
    for b in range(4):
        print(
            f"age quartile {b + 1}: {edges[b]:.0f}-{edges[b + 1]:.0f} "
            f"({stats.age_bin_percent[b]:.2f}%)"
        )
    print(f"{'feature':<14}{'median':>10}{'iqr':>10}{'missing':>9}")
    for fs in stats.features:
        print(f"{fs.name:<14}{fs.median:>10.1f}{fs.iqr:>10.1f}{fs.n_missing:>9}")
    if args.out is not None:
        out = Path(args.out)
        _check_overwrite([out], args.force)
        lines = ["feature,median,iqr"]
        lines += [f"{fs.name},{fs.median!r},{fs.iqr!r}" for fs in stats.features]
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        log.info("wrote %s", out)
    return EXIT_OK


def cmd_split(args) -> int:
    targets = sniff_targets(args.csv)
    cohort = load_cohort(args.csv, targets)
    assignment = stratified_split(cohort, seed=args.seed or 0)
    out = Path(args.out) if args.out is not None else Path("folds.csv")
    _check_overwrite([out], args.force)
    export_folds(cohort, assignment, out)
    sizes = {ROLE_TRAIN: 0, ROLE_VALIDATION: 0, ROLE_TEST: 0}
    for role in sizes:
        sizes[role] = len(materialize(cohort, assignment, role))
    log.info(
        "wrote %s (train=%d validation=%d test=%d)",
        out, sizes[ROLE_TRAIN], sizes[ROLE_VALIDATION], sizes[ROLE_TEST],
    )
    for t in assignment.unsplittable:
        log.warning("target %s is unsplittable: some fold has no positives", t)
    return EXIT_OK


def cmd_explain(args) -> int:
    ensemble = TreeEnsemble.load(args.model)
    targets = sniff_targets(args.csv)
    cohort = load_cohort(args.csv, targets)
    out = Path(args.out)
    planned = [out] + ([Path(args.svg)] if args.svg else [])
    _check_overwrite(planned, args.force)
    explanations = explain_cohort(ensemble, cohort)
    write_explanations_csv(out, explanations, cohort.schema.names)
    log.info("wrote %s", out)
    if args.svg:
        render_svg(beeswarm_layout(explanations, cohort), Path(args.svg))
        log.info("wrote %s", args.svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--force", action="store_true", help="allow overwriting artifacts")

    parser = argparse.ArgumentParser(
        prog="ecgdx",
        description="Boosted-tree diagnosis models over harmonized ECG cohorts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="full config-driven pipeline")
    p.add_argument("--config", required=True, help="key = value run config")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--jobs", type=int, default=None, help="concurrent targets")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--spec", required=True, help="key = value synthetic spec")
    p.add_argument("--out", required=True, help="output cohort CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", parents=[common], help="descriptive statistics")
    p.add_argument("csv", help="cohort CSV")
    p.add_argument("--out", default=None, help="also write feature,median,iqr CSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", parents=[common], help="stratified 18:1:1 fold export")
    p.add_argument("csv", help="cohort CSV")
    p.add_argument("--out", default=None, help="fold sidecar CSV (default folds.csv)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("explain", parents=[common], help="explain a saved model on a cohort")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--csv", required=True, help="cohort CSV")
    p.add_argument("--out", required=True, help="explanations CSV")
    p.add_argument("--svg", default=None, help="optional beeswarm SVG path")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CohortError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_TOTAL_FAILURE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
