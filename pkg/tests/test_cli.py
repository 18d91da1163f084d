import csv
import json
from importlib import resources
from pathlib import Path

import pytest

from bdcalc.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_MODULE, EXIT_OK, SWEEPABLE, THREADS_ENV, main
from bdcalc.experiments import COMMANDS
from bdcalc.schema import check, is_valid

ROOT = Path(__file__).resolve().parents[1]

BASE = {
    "seed": 1,
    "grid": {"n": 1, "points_per_axis": 64, "period": 1.0},
    "operator": {"kind": "hodge_dirac"},
    "coefficients": {"kind": "identity"},
}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, command, doc, *extra):
    return main([command, "--config", write(tmp_path, doc), "--out", str(tmp_path / "out"), *extra])


def last_error(capsys):
    return json.loads(capsys.readouterr().err)["error"]


def report_path(capsys) -> Path:
    return Path(capsys.readouterr().out.strip().splitlines()[-1])


# exit codes and pointers


def test_success_writes_a_valid_report(tmp_path, capsys):
    doc = dict(BASE, thresholds={"sup_ratio": {"min": 0.4999, "max": 0.5001}})
    assert run(tmp_path, "sqfn", doc) == EXIT_OK
    path = report_path(capsys)
    report = json.loads(path.read_text())
    check("report", report)
    assert report["passed"] and report["command"] == "sqfn"
    assert report["checks"][0]["metric"] == "sup_ratio" and report["checks"][0]["passed"]
    assert path.with_suffix(".csv").exists()
    index = json.loads((tmp_path / "out" / "index.json").read_text())
    assert index["latest"]["sqfn"] == path.name


def test_failed_threshold_exits_one(tmp_path, capsys):
    doc = dict(BASE, thresholds={"sup_ratio": {"max": 0.1}})
    assert run(tmp_path, "sqfn", doc) == EXIT_CHECK_FAILED
    report = json.loads(report_path(capsys).read_text())
    assert not report["passed"] and not report["checks"][0]["passed"]


@pytest.mark.parametrize(
    "mutate,pointer",
    [
        (lambda d: d.update(bogus=1), "/bogus"),
        (lambda d: d.pop("seed"), "/seed"),
        (lambda d: d["grid"].update(points_per_axis=60), "/grid/points_per_axis"),
        (lambda d: d.update(experiment={"nu": 0.5}), "/experiment/nu"),
        (lambda d: d.update(thresholds={"no_such_metric": {"max": 1}}), "/thresholds/no_such_metric"),
        (lambda d: d["coefficients"].update(kind="scalar"), "/coefficients"),
    ],
)
def test_configuration_errors_name_the_key(tmp_path, capsys, mutate, pointer):
    doc = json.loads(json.dumps(BASE))
    mutate(doc)
    assert run(tmp_path, "sqfn", doc) == EXIT_CONFIG
    err = last_error(capsys)
    assert err["pointer"].startswith(pointer)


def test_operator_forbidden_for_bvp_commands(tmp_path, capsys):
    assert run(tmp_path, "kato", BASE) == EXIT_CONFIG
    assert last_error(capsys)["pointer"] == "/operator"


def test_unreadable_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["sqfn", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["sqfn", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_budget_failure_exits_three(tmp_path, capsys):
    doc = dict(BASE, budget=8)
    assert run(tmp_path, "spectrum", doc) == EXIT_MODULE
    assert last_error(capsys)["type"] == "BudgetError"


def test_validation_failure_exits_three(tmp_path, capsys):
    doc = dict(BASE, coefficients={"kind": "scalar", "value": -1.0})
    assert run(tmp_path, "sqfn", doc) == EXIT_MODULE
    assert last_error(capsys)["type"] == "ValidationError"


# provenance and determinism


def test_reruns_are_bitwise_identical(tmp_path, capsys):
    doc = dict(BASE, coefficients={"kind": "random_accretive", "delta_target": 0.5, "skew_scale": 0.5})
    digests = []
    for _ in range(2):
        assert run(tmp_path, "validate", doc) == EXIT_OK
        digests.append(json.loads(report_path(capsys).read_text())["results_sha256"])
    assert digests[0] == digests[1]
    doc["seed"] = 2
    assert run(tmp_path, "validate", doc) == EXIT_OK
    assert json.loads(report_path(capsys).read_text())["results_sha256"] != digests[0]


def test_thread_cap_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "2")
    assert run(tmp_path, "validate", BASE) == EXIT_OK
    assert json.loads(report_path(capsys).read_text())["build"]["threads"] == 2
    assert run(tmp_path, "validate", BASE, "--threads", "1") == EXIT_OK
    assert json.loads(report_path(capsys).read_text())["build"]["threads"] == 1
    monkeypatch.setenv(THREADS_ENV, "zero")
    assert run(tmp_path, "validate", BASE) == EXIT_CONFIG


def test_resolved_config_records_defaults(tmp_path, capsys):
    assert run(tmp_path, "sqfn", BASE) == EXIT_OK
    report = json.loads(report_path(capsys).read_text())
    assert "quadrature" in report["config"] and "experiment" in report["config"]
    # the resolved config is itself a valid input
    assert is_valid("config", report["config"])


# sweeps


def test_sweep_aggregate(tmp_path, capsys):
    doc = dict(BASE, thresholds={"sup_ratio": {"min": 0.4999, "max": 0.5001}})
    code = run(tmp_path, "sqfn", doc, "--sweep", "grid.points_per_axis=32,64,128")
    assert code == EXIT_OK
    path = report_path(capsys)
    agg = json.loads(path.read_text())
    check("sweep", agg)
    assert [r["value"] for r in agg["rows"]] == [32, 64, 128]
    assert agg["summary"]["max_over_min"] == pytest.approx(1.0, abs=1e-9)
    for row in agg["rows"]:
        check("report", json.loads((path.parent / row["report"]).read_text()))
    with open(path.with_suffix(".csv")) as fh:
        assert len(list(csv.DictReader(fh))) == 3


@pytest.mark.parametrize("sweep_arg", ["grid.period=1,2", "seed", "seed=", "experiment.eps=[0.1"])
def test_sweep_rejects_bad_keys(tmp_path, capsys, sweep_arg):
    assert run(tmp_path, "sqfn", BASE, "--sweep", sweep_arg) == EXIT_CONFIG


def test_sweepable_keys_are_schema_paths():
    schema = json.loads(resources.files("bdcalc").joinpath("schemas", "config.schema.json").read_text())
    for key in SWEEPABLE:
        head = key.split(".")[0]
        assert head in schema["properties"]


# shipped configs and schemas


def test_top_level_schemas_match_package_copies():
    for name in ("config", "report", "sweep"):
        shipped = resources.files("bdcalc").joinpath("schemas", f"{name}.schema.json").read_text()
        assert json.loads((ROOT / "schemas" / f"{name}.schema.json").read_text()) == json.loads(shipped)


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_example_config_is_valid(command):
    doc = json.loads((ROOT / "configs" / f"{command}.json").read_text())
    check("config", doc)


@pytest.mark.parametrize("command", ["validate", "sqfn", "sgn", "cauchy", "rellich", "spectrum"])
def test_example_config_runs(tmp_path, capsys, command):
    code = main([command, "--config", str(ROOT / "configs" / f"{command}.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    check("report", json.loads(report_path(capsys).read_text()))
