import numpy as np
import pytest

from conftest import make_tree, random_ensemble

from ecgdx.boosting import BoostedTreesClassifier, TreeEnsemble
from ecgdx.cohort import Cohort, PlantedEffect, SCHEMA, SynthSpec, generate_synth
from ecgdx.explain import (
    TreeExplainer,
    brute_force_shap_values,
    explain_cohort,
    write_explanations_csv,
)
from ecgdx.splits import ROLE_TEST, ROLE_TRAIN, ROLE_VALIDATION, materialize, stratified_split


def test_single_leaf_tree_gives_zero_phi():
    leaf = make_tree([-1], [np.nan], [True], [-1], [-1], [0.7], [25])
    ens = TreeEnsemble(base_margin=0.1, trees=[leaf], best_iteration=1,
                       feature_names=("a", "b"))
    ex = TreeExplainer(ens)
    phi = ex.shap_values(np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(phi, [[0.0, 0.0]])
    assert ex.base_value == pytest.approx(0.8)
    assert ens.predict_margin([[1.0, 2.0]])[0] == pytest.approx(0.8)


def test_depth_one_tree_collapses_to_single_player():
    tree = make_tree(
        feature=[0, -1, -1],
        threshold=[0.0, np.nan, np.nan],
        default_left=[True, True, True],
        left=[1, -1, -1],
        right=[2, -1, -1],
        value=[0.0, -1.0, 2.0],
        cover=[10, 4, 6],
    )
    ens = TreeEnsemble(base_margin=0.5, trees=[tree], best_iteration=1,
                       feature_names=("a", "b"))
    ex = TreeExplainer(ens)
    for x in ([-3.0, 9.9], [3.0, -9.9], [np.nan, 0.0]):
        sample = np.array([x])
        phi = ex.shap_values(sample)[0]
        margin = ens.predict_margin(sample)[0]
        assert phi[0] == pytest.approx(margin - ex.base_value, abs=1e-12)
        assert phi[1] == 0.0
        oracle = brute_force_shap_values(ens, sample[0])
        np.testing.assert_allclose(phi, oracle.phi, atol=1e-12)


def test_oracle_empty_coalition_is_base_value():
    rng = np.random.default_rng(3)
    ens = random_ensemble(rng)
    x = rng.normal(size=5)
    oracle = brute_force_shap_values(ens, x)
    assert oracle.base_value == pytest.approx(TreeExplainer(ens).base_value, abs=1e-12)
    assert oracle.margin == pytest.approx(ens.predict_margin([x])[0], abs=1e-12)
    # efficiency by construction
    assert oracle.base_value + oracle.phi.sum() == pytest.approx(oracle.margin, abs=1e-10)


def test_symmetric_features_get_equal_phi():
    # two trees, one per feature, identical shape; a symmetric sample
    def tree_on(f):
        return make_tree(
            feature=[f, -1, -1],
            threshold=[0.0, np.nan, np.nan],
            default_left=[True, True, True],
            left=[1, -1, -1],
            right=[2, -1, -1],
            value=[0.0, -1.0, 1.0],
            cover=[10, 5, 5],
        )

    ens = TreeEnsemble(base_margin=0.0, trees=[tree_on(0), tree_on(1)],
                       best_iteration=2, feature_names=("a", "b"))
    x = np.array([0.7, 0.7])
    fast = TreeExplainer(ens).shap_values(np.array([x]))[0]
    oracle = brute_force_shap_values(ens, x)
    assert fast[0] == pytest.approx(fast[1], abs=1e-12)
    np.testing.assert_allclose(fast, oracle.phi, atol=1e-12)


def test_random_ensembles_match_oracle(rng):
    for case in range(40):
        case_rng = np.random.default_rng(1000 + case)
        ens = random_ensemble(
            case_rng,
            n_trees=int(case_rng.integers(1, 4)),
            n_features=5,
            max_depth=int(case_rng.integers(1, 4)),
        )
        ex = TreeExplainer(ens)
        X = case_rng.normal(size=(5, 5))
        X[case_rng.random((5, 5)) < 0.2] = np.nan
        phi = ex.shap_values(X)
        margins = ens.predict_margin(X)
        for i in range(5):
            oracle = brute_force_shap_values(ens, X[i])
            np.testing.assert_allclose(phi[i], oracle.phi, atol=1e-8)
            assert abs(ex.base_value + phi[i].sum() - margins[i]) <= 1e-9


def test_additivity_across_trees(rng):
    t_rng = np.random.default_rng(55)
    ens = random_ensemble(t_rng, n_trees=2, n_features=4, max_depth=3)
    t1, t2 = ens.trees
    e12 = TreeEnsemble(ens.base_margin, [t1, t2], 2, ens.feature_names)
    e1 = TreeEnsemble(ens.base_margin, [t1], 1, ens.feature_names)
    e2 = TreeEnsemble(0.0, [t2], 1, ens.feature_names)
    X = t_rng.normal(size=(8, 4))
    ex12 = TreeExplainer(e12)
    ex1 = TreeExplainer(e1)
    ex2 = TreeExplainer(e2)
    np.testing.assert_allclose(
        ex12.shap_values(X), ex1.shap_values(X) + ex2.shap_values(X), atol=1e-10
    )
    assert ex12.base_value == pytest.approx(ex1.base_value + ex2.base_value, abs=1e-12)


@pytest.fixture(scope="module")
def trained_on_cohort():
    spec = SynthSpec(
        n_samples=6000,
        seed=31,
        missing_rate={"qtc_ms": 0.1},
        prevalence={"G30": 0.1},
        effects={"G30": [PlantedEffect("qtc_ms", 1, 2.0), PlantedEffect("age", 1, 1.0)]},
    )
    cohort = generate_synth(spec)
    assignment = stratified_split(cohort, seed=1)
    train = materialize(cohort, assignment, ROLE_TRAIN)
    valid = materialize(cohort, assignment, ROLE_VALIDATION)
    test = materialize(cohort, assignment, ROLE_TEST)
    clf = BoostedTreesClassifier(max_rounds=30, patience=5)
    clf.fit(train.X, train.labels("G30"),
            eval_set=(valid.X, valid.labels("G30")),
            feature_names=SCHEMA.names)
    return clf, test


def test_local_accuracy_on_trained_model(trained_on_cohort):
    clf, test = trained_on_cohort
    ex = TreeExplainer(clf)
    phi = ex.shap_values(test.X)
    margins = clf.predict_margin(test.X)
    gaps = np.abs(ex.base_value + phi.sum(axis=1) - margins)
    assert gaps.max() <= 1e-9


def test_dummy_feature_has_zero_phi():
    # trees only ever split features 0..3, so feature 4 is a dummy player
    rng = np.random.default_rng(99)
    ens = random_ensemble(rng, n_trees=3, n_features=4, max_depth=3)
    wide = TreeEnsemble(ens.base_margin, ens.trees, ens.best_iteration,
                        feature_names=("a", "b", "c", "d", "e"))
    X = rng.normal(size=(20, 5))
    phi = TreeExplainer(wide).shap_values(X)
    assert (phi[:, 4] == 0.0).all()
    assert np.abs(phi[:, :4]).sum() > 0.0


def test_explain_cohort_preserves_order_and_is_deterministic(trained_on_cohort):
    clf, test = trained_on_cohort
    first = explain_cohort(clf, test)
    second = explain_cohort(clf, test)
    assert [e.sample_id for e in first] == list(test.sample_ids)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.phi, b.phi)
        assert a.margin == b.margin
    margins = clf.predict_margin(test.X)
    mean_reconstructed = np.mean([e.base_value + e.phi.sum() for e in first])
    assert mean_reconstructed == pytest.approx(margins.mean(), abs=1e-9)


def test_explain_empty_cohort(trained_on_cohort):
    clf, _ = trained_on_cohort
    empty = Cohort([], np.empty((0, 10)), np.empty((0, 1), dtype=np.int8), ["G30"])
    assert explain_cohort(clf, empty) == []


def test_explain_cohort_schema_mismatch(trained_on_cohort):
    clf, test = trained_on_cohort
    wrong = TreeEnsemble(0.0, [], 0, feature_names=("a", "b"))
    with pytest.raises(ValueError, match="schema"):
        explain_cohort(wrong, test)


def test_explainer_rejects_missing_cover():
    bad = make_tree([0, -1, -1], [0.0, np.nan, np.nan], [True] * 3,
                    [1, -1, -1], [2, -1, -1], [0.0, -1.0, 1.0], [0, 0, 0])
    ens = TreeEnsemble(0.0, [bad], 1, feature_names=("a",))
    with pytest.raises(ValueError, match="cover"):
        TreeExplainer(ens)


def test_brute_force_feature_cap():
    ens = TreeEnsemble(0.0, [], 0, feature_names=tuple(f"f{i}" for i in range(16)))
    with pytest.raises(ValueError, match="15"):
        brute_force_shap_values(ens, np.zeros(16))


def test_explanations_csv(tmp_path, trained_on_cohort):
    clf, test = trained_on_cohort
    sub = test.subset(np.arange(10))
    explanations = explain_cohort(clf, sub)
    path = write_explanations_csv(tmp_path / "e.csv", explanations, SCHEMA.names)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",")[:2] == ["sample_id", "phi_age"]
    assert lines[0].split(",")[-2:] == ["base_value", "margin"]
    assert len(lines) == 11
    # local accuracy survives the round trip through text
    cells = lines[1].split(",")
    total = float(cells[-2]) + sum(float(v) for v in cells[1:-2])
    assert total == pytest.approx(float(cells[-1]), abs=1e-9)
