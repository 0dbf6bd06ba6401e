"""Boosted-tree diagnosis models for harmonized ECG/demographic cohorts.

The package covers the full tabular study pipeline: cohort CSV ingestion
and synthetic generation, deterministic stratified 18:1:1 splitting,
per-target gradient-boosted binary classifiers with AUROC early stopping,
exact path-dependent Shapley explanations with beeswarm figures, and
AUROC / bootstrap-CI / prevalence reporting.
"""

from .beeswarm import BeeswarmLayout, beeswarm_layout, render_svg
from .boosting import (
    BoostedTreesClassifier,
    Tree,
    TreeEnsemble,
    logistic_grad_hess,
    sigmoid,
)
from .cohort import (
    Cohort,
    CohortError,
    DescriptiveStats,
    FeatureSchema,
    PlantedEffect,
    Sample,
    SynthSpec,
    FEATURE_NAMES,
    SCHEMA,
    descriptive_stats,
    generate_synth,
    load_cohort,
    sniff_targets,
    write_cohort,
)
from .config import ConfigError, RunConfig, load_run_config, load_synth_spec
from .explain import (
    Explanation,
    TreeExplainer,
    brute_force_shap_values,
    explain_cohort,
    write_explanations_csv,
)
from .metrics import (
    MetricReport,
    ReportTable,
    auroc,
    bootstrap_auroc_ci,
    format_performance_cell,
    prevalence,
    report_table,
)
from .splits import (
    FoldAssignment,
    N_FOLDS,
    ROLE_TEST,
    ROLE_TRAIN,
    ROLE_VALIDATION,
    export_folds,
    materialize,
    stratified_split,
)

__version__ = "0.1.0"

__all__ = [
    "BeeswarmLayout",
    "BoostedTreesClassifier",
    "Cohort",
    "CohortError",
    "ConfigError",
    "DescriptiveStats",
    "Explanation",
    "FEATURE_NAMES",
    "FeatureSchema",
    "FoldAssignment",
    "MetricReport",
    "N_FOLDS",
    "PlantedEffect",
    "ReportTable",
    "ROLE_TEST",
    "ROLE_TRAIN",
    "ROLE_VALIDATION",
    "RunConfig",
    "Sample",
    "SCHEMA",
    "SynthSpec",
    "Tree",
    "TreeEnsemble",
    "TreeExplainer",
    "auroc",
    "beeswarm_layout",
    "bootstrap_auroc_ci",
    "brute_force_shap_values",
    "descriptive_stats",
    "explain_cohort",
    "export_folds",
    "format_performance_cell",
    "generate_synth",
    "load_cohort",
    "load_run_config",
    "load_synth_spec",
    "logistic_grad_hess",
    "materialize",
    "prevalence",
    "render_svg",
    "report_table",
    "sigmoid",
    "sniff_targets",
    "stratified_split",
    "write_cohort",
    "write_explanations_csv",
]
