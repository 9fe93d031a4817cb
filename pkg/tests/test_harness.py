import json
import math

import numpy as np
import pytest

from forgetmeter.errors import PreconditionError
from forgetmeter.harness import config as cfgmod
from forgetmeter.harness.cli import main
from forgetmeter.harness.outputs import CSV_COLUMNS, emit_outputs, grid_panels, read_metrics_csv, write_metrics_csv
from forgetmeter.harness.runner import (
    RunRecord,
    coefficient_of_variation,
    measurement_times,
    run_experiment,
    run_sweep,
    training_efficiency,
)

CONFIGS = sorted((p for p in __import__("pathlib").Path(__file__).parents[1].joinpath("configs").glob("*.json")),
                 key=str)

# -- configs ----------------------------------------------------------------------


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg = cfgmod.load(path)
    again = cfgmod.parse(cfg.to_json())
    assert again == cfg and again.hash() == cfg.hash()


def test_hash_ignores_seeds_and_paths():
    a = cfgmod.default_config("regression")
    b = cfgmod.default_config("regression", seeds=[1, 2], out_dir="elsewhere", name="other")
    assert a.hash() == b.hash() != a.with_override("learner.lr", 0.05).hash()


@pytest.mark.parametrize("doc", [
    {},
    {"setting": "quantum"},
    {"setting": "regression", "seeds": []},
    {"setting": "regression", "learner": {"widgets": 3}},
    {"setting": "regression", "forgetting": {"k": 0}},
])
def test_invalid_configs_rejected(doc):
    with pytest.raises(PreconditionError):
        cfgmod.from_dict(doc)


def test_override_rules():
    cfg = cfgmod.default_config("regression")
    assert cfg.with_override("learner.hidden", 8.0).learner["hidden"] == 8
    assert cfg.with_override("learner.momentum", 0.9).learner["momentum"] == 0.9
    for bad in ("learner.nothing", "nowhere.hidden", "learner.optimizer"):
        with pytest.raises(PreconditionError):
            cfg.with_override(bad, 1)


def test_measurement_schedule_every_five_percent():
    assert measurement_times(cfgmod.default_config("regression"), 120) == list(range(6, 121, 6))


# -- efficiency -------------------------------------------------------------------


def test_efficiency_examples():
    assert training_efficiency([(0, 3.0), (5, 3.0), (10, 3.0)]) == pytest.approx(1.0)
    assert training_efficiency([(s, 1.0 - s / 100) for s in range(101)]) == pytest.approx(2.0)
    steep = training_efficiency([(0, 1.0)] + [(s, 0.0) for s in range(1, 101)])
    assert math.isfinite(steep) and steep == pytest.approx(200.0)


def test_efficiency_errors():
    with pytest.raises(PreconditionError):
        training_efficiency([(0, 1.0), (1, -0.1)])
    with pytest.raises(PreconditionError):
        training_efficiency([(0, 1.0)])
    with pytest.raises(PreconditionError):
        training_efficiency([(0, 0.0), (1, 0.0)])


def test_coefficient_of_variation():
    assert coefficient_of_variation([2.0, 2.0, 2.0]) == 0.0
    assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(np.std([1, 3]) / 2)


# -- outputs ----------------------------------------------------------------------


def _record(run_id="r", seed=3):
    rec = RunRecord(run_id, seed, "regression", "abc")
    rec.add("train_loss", 0, 1.0)
    rec.add("train_loss", 1, 0.25)
    rec.add("gamma_k40", 1, 1e-3)
    rec.gamma_trace.append({"t": 1, "k": 40, "gamma": 1e-3, "std_error": 0.0})
    return rec


def test_csv_golden(tmp_path):
    n = write_metrics_csv([_record()], tmp_path / "m.csv")
    assert n == 3
    assert (tmp_path / "m.csv").read_text() == (
        "run_id,seed,step,metric,value\n"
        "r,3,1,gamma_k40,0.001\n"
        "r,3,0,train_loss,1.0\n"
        "r,3,1,train_loss,0.25\n")
    assert CSV_COLUMNS == ("run_id", "seed", "step", "metric", "value")


def test_csv_row_count_matches_points(tmp_path):
    recs = [_record("a"), _record("b")]
    recs[1].add("val_loss", 1, 0.5)
    emit_outputs(recs, tmp_path)
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(rows) - 1 == sum(len(v) for r in recs for v in r.metrics.values()) == 7
    assert read_metrics_csv(tmp_path / "metrics.csv")["b"]["val_loss"] == [(1, 0.5)]


def test_emit_requires_records_and_writable_dir(tmp_path):
    with pytest.raises(PreconditionError):
        emit_outputs([], tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(PreconditionError):
        emit_outputs([_record()], blocker / "sub")


def test_summary_and_plots(tmp_path):
    paths = emit_outputs([_record()], tmp_path, config=cfgmod.default_config("regression"))
    summary = json.loads(paths["summary"].read_text())
    assert summary["config"]["setting"] == "regression" and summary["runs"][0]["run_id"] == "r"
    svg = paths["gamma_vs_step"].read_text()
    assert svg.startswith("<svg") and "data:" in svg


def test_panels_svg_white_at_half():
    grid = np.full((3, 3), 0.5)
    svg = grid_panels({"t": 5, "k": 40, "reference": grid, "futures": np.eye(3)}, "p")
    assert svg.count("<rect") >= 18 and "#ffffff" in svg and "40-update futures" in svg
    assert "#d62728" in svg and "#1f77b4" in svg  # 0 and 1 ends of the colour map


# -- runs -------------------------------------------------------------------------


def test_degenerate_run_is_flat_with_unit_efficiency():
    rec = run_experiment(cfgmod.default_config("degenerate"), 0)
    assert rec.complete and np.all(rec.gammas() == 0.0) and len(rec.gammas()) == 20
    assert rec.efficiency == pytest.approx(1.0)


def _small(setting="regression", **forgetting):
    cfg = cfgmod.default_config(setting, forgetting={"num_particles": 16, "k": 5, "ks": [5], **forgetting})
    return cfg


def test_measurement_does_not_touch_training():
    cfg = _small()
    on, off = run_experiment(cfg, 4), run_experiment(cfg, 4, measure=False)
    assert on.metrics["train_loss"] == off.metrics["train_loss"]
    assert on.metrics["val_loss"] == off.metrics["val_loss"]
    assert len(on.gammas()) == 20 and len(off.gammas()) == 0


def test_gamma_times_inside_schedule():
    cfg = _small()
    rec = run_experiment(cfg, 1)
    assert set(rec.gamma_times().astype(int)) <= set(measurement_times(cfg, 120))


def test_failed_cell_marked_incomplete():
    cfg = cfgmod.default_config("regression", learner={"lr": 1e200})
    rec = run_experiment(cfg, 0, measure=False)
    assert not rec.complete and rec.error


def test_sweep_table_shape():
    res = run_sweep(_small(), "learner.hidden", [2, 3], [0, 1], workers=1)
    assert len(res.records) == 4 and [row["value"] for row in res.table] == [2, 3]
    assert all(row["n"] == 2 for row in res.table) and len(res.column("efficiency")) == 2


# -- cli --------------------------------------------------------------------------


def _write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_cli_run_is_deterministic(tmp_path):
    cfg = _write(tmp_path, {"setting": "degenerate", "forgetting": {"num_particles": 10}})
    assert main(["run", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    assert main(["plot", "--from", str(tmp_path / "a")]) == 0


def test_cli_exit_codes(tmp_path):
    assert main(["run", "--config", _write(tmp_path, {"setting": "nope"}), "--out", str(tmp_path / "x")]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 1
    assert main(["plot", "--from", str(tmp_path / "empty")]) == 2
    boom = _write(tmp_path, {"setting": "regression", "learner": {"lr": 1e200}, "forgetting": {"num_particles": 4}})
    assert main(["run", "--config", boom, "--out", str(tmp_path / "y"), "--no-measure"]) == 2
    assert main(["sweep", "--config", _write(tmp_path, {"setting": "degenerate"}), "--axis", "env.colour",
                 "--values", "1", "--seeds", "0", "--out", str(tmp_path / "z")]) == 1
