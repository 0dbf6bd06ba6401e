import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdx.metrics import (
    MetricReport,
    auroc,
    bootstrap_auroc_ci,
    format_performance_cell,
    prevalence,
    report_table,
)


def pairwise_auroc(y, s):
    """Brute-force oracle: wins plus half-ties over all pos-neg pairs."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    pos = s[y == 1]
    neg = s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def test_auroc_worked_example():
    labels = [0, 0, 1, 1]
    scores = [0.1, 0.4, 0.35, 0.8]
    assert pairwise_auroc(labels, scores) == 0.75
    assert auroc(labels, scores) == 0.75


def test_auroc_perfect_separation():
    assert auroc([0, 0, 0, 1, 1], [1, 2, 3, 4, 5]) == 1.0


def test_auroc_all_ties():
    assert auroc([0, 1, 0, 1], [3.0, 3.0, 3.0, 3.0]) == 0.5


def test_auroc_errors():
    with pytest.raises(ValueError):
        auroc([0, 0], [0.1, 0.2])
    with pytest.raises(ValueError):
        auroc([0, 1], [0.1])
    with pytest.raises(ValueError):
        auroc([], [])
    with pytest.raises(ValueError):
        auroc([0, 2], [0.1, 0.2])
    with pytest.raises(ValueError):
        auroc([0, 1], [0.1, np.nan])


@st.composite
def labeled_scores(draw):
    n = draw(st.integers(min_value=2, max_value=120))
    labels = draw(
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(
            lambda ls: 0 < sum(ls) < len(ls)
        )
    )
    # small integer alphabet makes heavy ties likely
    scores = draw(st.lists(st.integers(-4, 4), min_size=n, max_size=n))
    return labels, [float(v) for v in scores]


@settings(max_examples=300, deadline=None)
@given(labeled_scores())
def test_auroc_matches_pairwise_oracle_exactly(case):
    labels, scores = case
    assert auroc(labels, scores) == pairwise_auroc(labels, scores)


@settings(max_examples=200, deadline=None)
@given(labeled_scores())
def test_auroc_negation_symmetry_exact(case):
    labels, scores = case
    neg = [-v for v in scores]
    assert auroc(labels, scores) + auroc(labels, neg) == 1.0


@settings(max_examples=200, deadline=None)
@given(labeled_scores())
def test_auroc_monotone_transform_invariant(case):
    labels, scores = case
    transformed = [3.0 * v + 7.0 for v in scores]  # exact on small integers
    assert auroc(labels, scores) == auroc(labels, transformed)


def test_prevalence():
    assert prevalence([0, 0, 1, 1]) == 0.5
    assert prevalence([0, 0, 0]) == 0.0
    with pytest.raises(ValueError):
        prevalence([])


def test_bootstrap_deterministic_under_seed(rng):
    y = rng.integers(0, 2, 200)
    y[:5] = 1
    y[5:10] = 0
    s = rng.normal(size=200) + y
    a = bootstrap_auroc_ci(y, s, iterations=200, seed=7)
    b = bootstrap_auroc_ci(y, s, iterations=200, seed=7)
    assert a == b
    c = bootstrap_auroc_ci(y, s, iterations=200, seed=8)
    assert a != c


def test_bootstrap_separated_scores_interval_near_one(rng):
    y = np.array([0] * 400 + [1] * 100)
    s = np.concatenate([rng.uniform(0, 0.4, 400), rng.uniform(0.6, 1.0, 100)])
    lo, hi = bootstrap_auroc_ci(y, s, iterations=500, seed=1)
    assert lo <= hi
    assert lo >= 0.99
    assert hi <= 1.0


def test_bootstrap_alpha_monotone(rng):
    y = rng.integers(0, 2, 150)
    y[0] = 0
    y[1] = 1
    s = rng.normal(size=150) + 0.8 * y
    lo_wide, hi_wide = bootstrap_auroc_ci(y, s, iterations=400, alpha=0.01, seed=3)
    lo_narrow, hi_narrow = bootstrap_auroc_ci(y, s, iterations=400, alpha=0.10, seed=3)
    assert 0.0 <= lo_wide <= lo_narrow <= hi_narrow <= hi_wide <= 1.0


def test_bootstrap_redraws_single_class_resamples():
    # tiny, imbalanced input: single-class resamples are common and must
    # be replaced, not returned
    y = np.array([1] + [0] * 11)
    s = np.arange(12, dtype=float)
    lo, hi = bootstrap_auroc_ci(y, s, iterations=300, seed=5)
    assert 0.0 <= lo <= hi <= 1.0


def _report(target="G30", dataset="internal", a=0.8134, lo=0.8124, hi=0.8140,
            prev=0.0104, n=1000):
    return MetricReport(target, dataset, a, lo, hi, prev, n)


def test_metric_report_validation():
    with pytest.raises(ValueError):
        _report(dataset="nope")
    with pytest.raises(ValueError):
        _report(lo=0.9, hi=0.1)
    with pytest.raises(ValueError):
        _report(prev=0.0)
    with pytest.raises(ValueError):
        _report(n=0)


def test_format_cell_matches_published_layout():
    cell = format_performance_cell(0.8134, 0.8124, 0.8140, 0.0104)
    assert cell == "0.8134 (0.8124, 0.8140) [1.04%]"


def test_format_cell_fixed_precision():
    assert format_performance_cell(0.5, 0.25, 0.75, 0.5).startswith("0.5000 (0.2500, 0.7500)")


def test_report_table_grouping_and_order():
    reports = [
        _report("F03", "internal", 0.8490, 0.8482, 0.8490, 0.026),
        _report("G30", "internal"),
        _report("G30", "external", 0.8678, 0.8676, 0.8682, 0.0013),
    ]
    table = report_table(reports, {"G30": "Neurological", "F03": "Psychiatric"})
    md = table.to_markdown()
    assert "Internal AUROC (95% CI) [Prev.]" in md
    assert md.index("Neurological") < md.index("Psychiatric")
    assert "| G30 | 0.8134 (0.8124, 0.8140) [1.04%] | 0.8678 (0.8676, 0.8682) [0.13%] |" in md
    csv_text = table.to_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0] == "group,code,dataset,auroc,ci_low,ci_high,prevalence,n"
    assert len(lines) == 4
    # rows sorted by group then code; internal before external
    assert lines[1].startswith("Neurological,G30,internal")
    assert lines[2].startswith("Neurological,G30,external")
    assert lines[3].startswith("Psychiatric,F03,internal")


def test_report_table_rejects_duplicates():
    with pytest.raises(ValueError):
        report_table([_report(), _report()])


def test_report_table_warns_on_point_outside_interval():
    bad = _report(a=0.9, lo=0.1, hi=0.2)
    with pytest.warns(UserWarning):
        table = report_table([bad])
    assert len(table.warnings) == 1
