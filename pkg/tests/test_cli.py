import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ecgdx.cli import main
from ecgdx.cohort import PlantedEffect, SynthSpec, generate_synth, load_cohort, write_cohort
from ecgdx.config import (
    ConfigError,
    build_synth_spec,
    load_run_config,
    parse_kv_file,
)

SYNTH_SPEC = """
# small synthetic study
n_samples = 3000
seed = 5
prevalence.G30 = 0.10
effect.G30 = qtc_ms:+:2.0, age:+:1.5
missing.qtc_ms = 0.05
"""

RUN_CONFIG = """
internal_csv = internal.csv
external_csv = external.csv
targets = G30
seed = 9
auroc_floor = 0.7
bootstrap_iterations = 100
gbm.max_rounds = 12
gbm.patience = 4
group.G30 = Neurological conditions
"""


def _write(path: Path, text: str) -> Path:
    path.write_text(text.strip() + "\n", encoding="utf-8")
    return path


def test_parse_kv_file(tmp_path):
    p = _write(tmp_path / "c.cfg", "# comment\na = 1\n\nb.c = x = y\n")
    assert parse_kv_file(p) == {"a": "1", "b.c": "x = y"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_kv_file(_write(tmp_path / "d.cfg", "a = 1\na = 2"))
    with pytest.raises(ConfigError, match="key = value"):
        parse_kv_file(_write(tmp_path / "e.cfg", "not an assignment"))


def test_load_run_config(tmp_path):
    p = _write(tmp_path / "run.cfg", RUN_CONFIG)
    cfg = load_run_config(p)
    assert cfg.internal_csv == (tmp_path / "internal.csv").resolve()
    assert cfg.targets == ["G30"]
    assert cfg.seed == 9
    assert cfg.gbm == {"max_rounds": 12, "patience": 4}
    assert cfg.groups == {"G30": "Neurological conditions"}
    with pytest.raises(ConfigError, match="internal_csv"):
        load_run_config(_write(tmp_path / "bad.cfg", "targets = G30"))
    with pytest.raises(ConfigError, match="targets"):
        load_run_config(_write(tmp_path / "bad2.cfg", "internal_csv = x.csv"))
    with pytest.raises(ConfigError, match="unknown"):
        load_run_config(
            _write(tmp_path / "bad3.cfg",
                   "internal_csv = x.csv\ntargets = G30\nmystery = 1")
        )
    with pytest.raises(ConfigError, match="auroc_floor"):
        load_run_config(
            _write(tmp_path / "bad4.cfg",
                   "internal_csv = x.csv\ntargets = G30\nauroc_floor = 0.2")
        )
    with pytest.raises(ConfigError, match="override"):
        load_run_config(
            _write(tmp_path / "bad5.cfg",
                   "internal_csv = x.csv\ntargets = G30\ngbm.n_estimators = 3")
        )


def test_build_synth_spec(tmp_path):
    p = _write(tmp_path / "s.cfg", SYNTH_SPEC)
    spec = build_synth_spec(parse_kv_file(p))
    assert spec.n_samples == 3000
    assert spec.prevalence == {"G30": 0.10}
    assert spec.effects["G30"] == [
        PlantedEffect("qtc_ms", 1, 2.0),
        PlantedEffect("age", 1, 1.5),
    ]
    assert spec.missing_rate == {"qtc_ms": 0.05}
    with pytest.raises(ConfigError):
        build_synth_spec({"n_samples": "10", "effect.G30": "qtc_ms:?:1"})
    with pytest.raises(ConfigError):
        build_synth_spec({"n_samples": "10", "bogus": "1"})


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One full CLI run shared by the artifact checks below."""
    root = tmp_path_factory.mktemp("cli_run")
    spec_path = _write(root / "synth.cfg", SYNTH_SPEC)
    assert main(["synth", "--spec", str(spec_path), "--out", str(root / "internal.csv")]) == 0
    external_spec = SYNTH_SPEC.replace("seed = 5", "seed = 6")
    _write(root / "synth_ext.cfg", external_spec)
    assert main(["synth", "--spec", str(root / "synth_ext.cfg"),
                 "--out", str(root / "external.csv")]) == 0
    cfg_path = _write(root / "run.cfg", RUN_CONFIG)
    out = root / "out"
    code = main(["run", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    return root, out


def test_run_emits_all_artifacts(run_dir):
    _, out = run_dir
    for name in (
        "report.csv",
        "report.md",
        "summary.json",
        "folds_internal.csv",
        "model_G30.json",
        "train_G30.log",
        "explanations_G30_internal.csv",
        "beeswarm_G30_internal.svg",
    ):
        assert (out / name).exists(), name


def test_run_summary_matches_report(run_dir):
    _, out = run_dir
    summary = json.loads((out / "summary.json").read_text())
    rows = list(csv.DictReader((out / "report.csv").read_text().splitlines()))
    by_ds = {r["dataset"]: float(r["auroc"]) for r in rows if r["code"] == "G30"}
    floor = summary["auroc_floor"]
    expected_pass = by_ds["internal"] > floor and by_ds["external"] > floor
    assert summary["targets"]["G30"]["passed"] == expected_pass
    assert ("G30" in summary["passing"]) == expected_pass
    assert summary["targets"]["G30"]["internal_auroc"] == by_ds["internal"]


def test_run_report_groups(run_dir):
    _, out = run_dir
    md = (out / "report.md").read_text()
    assert "**Neurological conditions**" in md
    assert "| G30 |" in md
    csv_text = (out / "report.csv").read_text()
    assert csv_text.startswith("group,code,dataset,auroc")
    assert "Neurological conditions,G30,internal" in csv_text


def test_run_training_log_layout(run_dir):
    _, out = run_dir
    lines = (out / "train_G30.log").read_text().strip().splitlines()
    assert lines[0] == "round,train_logloss,valid_auroc"
    assert 2 <= len(lines) <= 13  # max_rounds 12
    first = lines[1].split(",")
    assert first[0] == "1"
    float(first[1]), float(first[2])


def test_run_refuses_overwrite_without_force(run_dir):
    root, out = run_dir
    code = main(["run", "--config", str(root / "run.cfg"), "--out", str(out)])
    assert code == 1


def test_run_is_deterministic(run_dir):
    root, out = run_dir
    out2 = root / "out2"
    code = main(["run", "--config", str(root / "run.cfg"), "--out", str(out2)])
    assert code == 0
    assert (out / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()
    assert (out / "model_G30.json").read_bytes() == (out2 / "model_G30.json").read_bytes()
    assert (out / "beeswarm_G30_internal.svg").read_bytes() == (
        out2 / "beeswarm_G30_internal.svg"
    ).read_bytes()


def test_run_partial_failure_on_unknown_target(run_dir, tmp_path):
    root, _ = run_dir
    cfg = _write(
        tmp_path / "partial.cfg",
        RUN_CONFIG.replace("targets = G30", "targets = G30,F99"),
    )
    # config paths resolve relative to the config file; copy next to data
    cfg = _write(root / "partial.cfg", cfg.read_text())
    out = root / "partial_out"
    code = main(["run", "--config", str(cfg), "--out", str(out)])
    assert code == 2
    summary = json.loads((out / "summary.json").read_text())
    assert "error" in summary["targets"]["F99"]
    assert summary["targets"]["G30"]["passed"] in (True, False)


def test_run_total_failure_when_no_targets_usable(run_dir):
    root, _ = run_dir
    cfg = _write(root / "none.cfg", RUN_CONFIG.replace("targets = G30", "targets = F99"))
    code = main(["run", "--config", str(cfg), "--out", str(root / "none_out")])
    assert code == 1


def test_cmd_explain_reproduces_run_explanations(run_dir):
    root, out = run_dir
    target_csv = root / "test_fold.csv"
    # rebuild the internal test fold exactly as the run saw it
    from ecgdx.splits import ROLE_TEST, materialize, stratified_split

    internal = load_cohort(root / "internal.csv", ["G30"])
    assignment = stratified_split(internal, seed=9)
    test_fold = materialize(internal, assignment, ROLE_TEST)
    write_cohort(test_fold, target_csv)
    expl_csv = root / "explain_again.csv"
    code = main([
        "explain",
        "--model", str(out / "model_G30.json"),
        "--csv", str(target_csv),
        "--out", str(expl_csv),
        "--svg", str(root / "explain_again.svg"),
    ])
    assert code == 0
    assert expl_csv.read_bytes() == (out / "explanations_G30_internal.csv").read_bytes()
    assert (root / "explain_again.svg").read_bytes() == (
        out / "beeswarm_G30_internal.svg"
    ).read_bytes()


def test_cmd_split_roles(run_dir):
    root, _ = run_dir
    out = root / "folds_cli.csv"
    code = main(["split", str(root / "internal.csv"), "--seed", "3",
                 "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.read_text().splitlines()))
    n = len(rows)
    roles = {}
    for r in rows:
        roles[r["role"]] = roles.get(r["role"], 0) + 1
    assert abs(roles["train"] - 0.9 * n) <= 40
    assert abs(roles["validation"] - 0.05 * n) <= 5
    assert abs(roles["test"] - 0.05 * n) <= 5


def test_cmd_stats_table(run_dir, capsys):
    root, _ = run_dir
    out = root / "stats.csv"
    code = main(["stats", str(root / "internal.csv"), "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "rr_ms" in printed
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "feature,median,iqr"
    assert len(lines) == 10  # age + 8 ecg features
    names = [l.split(",")[0] for l in lines[1:]]
    assert names[0] == "age"
    assert "qtc_ms" in names


def test_cmd_synth_refuses_overwrite(run_dir):
    root, _ = run_dir
    code = main(["synth", "--spec", str(root / "synth.cfg"),
                 "--out", str(root / "internal.csv")])
    assert code == 1
    code = main(["synth", "--spec", str(root / "synth.cfg"),
                 "--out", str(root / "internal.csv"), "--force"])
    assert code == 0


def test_config_error_exit_code(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_seed_override_changes_synth(tmp_path):
    spec_path = _write(tmp_path / "s.cfg", SYNTH_SPEC)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert main(["synth", "--spec", str(spec_path), "--out", str(a)]) == 0
    assert main(["synth", "--spec", str(spec_path), "--out", str(b), "--seed", "77"]) == 0
    assert a.read_bytes() != b.read_bytes()
