import csv
import json

import numpy as np
import pytest

from fillbox import NumericError, cli, optimal, sir_core
from fillbox import ModelParams


def _config(tmp_path, params="alpha = 0.3\nbeta = 1.0\ngamma = 0.2\nepsilon = 0.01\n", extra=""):
    path = tmp_path / "run.ini"
    path.write_text(f"[params]\n{params}\n[sim]\noutput_dt = 0.05\n\n[run]\noutput_dir = {tmp_path / 'out'}\n{extra}")
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _run(args, capsys):
    code = cli.main(args)
    return code, capsys.readouterr()


def test_unknown_key_is_named(tmp_path, capsys):
    cfg = _config(tmp_path, extra="colour = blue\n")
    code, out = _run(["optimal", "--config", cfg], capsys)
    assert code == cli.EXIT_CONFIG
    assert "colour" in out.err


@pytest.mark.parametrize("text,needle", [
    ("[params]\nalpha = 0.3\n", "missing"),
    ("[params]\nalpha = x\nbeta = 1\ngamma = 0.2\nepsilon = 0.01\n", "alpha"),
    ("[plot]\nwidth = 3\n", "plot"),
    ("[sim]\nrtol = 1e-9\n", "rtol"),
    ("not an ini file", "malformed"),
])
def test_bad_configs(tmp_path, capsys, text, needle):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    code, out = _run(["optimal", "--config", str(path), "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_CONFIG
    assert needle in out.err


def test_inline_comments_allowed(tmp_path):
    cfg = cli.load_config(_config(tmp_path, extra="n = 12   ; search intervals\nstrategy = grid  # exhaustive\n"))
    assert cfg.n == 12 and cfg.strategy == "grid"


def test_missing_config_file(tmp_path, capsys):
    code, _ = _run(["optimal", "--config", str(tmp_path / "nope.ini")], capsys)
    assert code == cli.EXIT_CONFIG


def test_simulate_optimal_plateau(tmp_path, capsys):
    code, _ = _run(["simulate", "--config", _config(tmp_path), "--policy", "optimal"], capsys)
    assert code == 0
    rows = _rows(tmp_path / "out" / "trajectory.csv")
    assert tuple(rows[0]) == cli.TRAJECTORY_HEADER
    data = np.array(rows[1:], dtype=float)
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert tuple(summary) == cli.SUMMARY_KEYS
    inside = (data[:, 0] >= summary["tau1"]) & (data[:, 0] <= summary["tau2"])
    assert np.max(np.abs(data[inside, 2] - 0.2)) <= 1e-6
    assert summary["regime"] == "constrained"
    assert summary["cost_numeric"] == pytest.approx(summary["cost_closed_form"], rel=1e-6)


def test_simulate_laissez_faire_costs_nothing(tmp_path, capsys):
    code, _ = _run(["simulate", "--config", _config(tmp_path), "--policy", "laissez_faire"], capsys)
    assert code == 0
    data = np.array(_rows(tmp_path / "out" / "trajectory.csv")[1:], dtype=float)
    assert np.all(data[:, 4] == 0.0)
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["tau1"] is None and summary["cost_closed_form"] == 0.0


def test_simulate_other_policy_specs(tmp_path, capsys):
    policy_file = tmp_path / "policy.csv"
    policy_file.write_text("t_start,t_end,b\n0,5,1\n5,8,0\n8,400,1\n")
    for spec in ("flatten_curve", "constant:0.5:2:12", f"file:{policy_file}"):
        code, out = _run(["simulate", "--config", _config(tmp_path), "--policy", spec], capsys)
        assert code == 0, out.err
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["cost_numeric"] == pytest.approx(3.0, rel=1e-9)


@pytest.mark.parametrize("spec", ["bogus", "constant:0.5:2", "constant:a:1:2", "file:/no/such.csv"])
def test_bad_policy_specs(tmp_path, capsys, spec):
    code, _ = _run(["simulate", "--config", _config(tmp_path), "--policy", spec], capsys)
    assert code == cli.EXIT_CONFIG


def test_bad_policy_file(tmp_path, capsys):
    policy_file = tmp_path / "policy.csv"
    policy_file.write_text("start,end,b\n0,400,1\n")
    code, _ = _run(["simulate", "--config", _config(tmp_path), "--policy", f"file:{policy_file}"], capsys)
    assert code == cli.EXIT_CONFIG
    policy_file.write_text("t_start,t_end,b\n0,10,1\n")
    code, out = _run(["simulate", "--config", _config(tmp_path), "--policy", f"file:{policy_file}"], capsys)
    assert code == cli.EXIT_CONFIG and "covers" in out.err


def test_optimal_summary(tmp_path, capsys):
    code, out = _run(["optimal", "--config", _config(tmp_path)], capsys)
    assert code == 0
    summary = json.loads(out.out)
    assert summary["x_tau1"] == pytest.approx(0.693, abs=5e-4)
    assert summary["cost_closed_form"] == pytest.approx(2.36372, abs=1e-5)
    assert summary["jump_level"] == pytest.approx(0.3 / summary["x_tau1"], rel=1e-14)


@pytest.mark.parametrize("params", [
    "alpha = 0.3\nbeta = 1.0\ngamma = 0.99\nepsilon = 0.01\n",
    "alpha = 1.3\nbeta = 1.0\ngamma = 0.2\nepsilon = 0.01\n",
])
def test_optimal_laissez_faire_regime(tmp_path, capsys, params):
    code, out = _run(["optimal", "--config", _config(tmp_path, params)], capsys)
    assert code == 0
    summary = json.loads(out.out)
    assert summary["regime"] == "laissez_faire_optimal"
    assert summary["cost_numeric"] == 0.0 and summary["cost_closed_form"] == 0.0


def test_compare(tmp_path, capsys):
    code, _ = _run(["compare", "--config", _config(tmp_path)], capsys)
    assert code == 0
    report = json.loads((tmp_path / "out" / "compare.json").read_text())
    by_name = {r["policy_name"]: r for r in report["reports"]}
    assert by_name["optimal"]["cost_numeric"] < by_name["flatten_curve"]["cost_numeric"]
    assert by_name["laissez_faire"]["feasible"] is False
    assert tuple(_rows(tmp_path / "out" / "compare.csv")[0]) == cli.COMPARE_HEADER
    fig2 = _rows(tmp_path / "out" / "figure2.csv")
    assert tuple(fig2[0]) == cli.FIGURE2_HEADER and len(fig2) > 100


def test_compare_laissez_faire_regime(tmp_path, capsys):
    params = "alpha = 0.3\nbeta = 1.0\ngamma = 0.99\nepsilon = 0.01\n"
    code, _ = _run(["compare", "--config", _config(tmp_path, params)], capsys)
    assert code == 0
    report = json.loads((tmp_path / "out" / "compare.json").read_text())
    assert all(r["cost_numeric"] == 0.0 and r["feasible"] for r in report["reports"])


def test_verify_passes(tmp_path, capsys):
    code, out = _run(["verify", "--config", _config(tmp_path), "--n", "8"], capsys)
    assert code == 0
    report = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert report["passed"] and report["n"] == 8
    assert report["best_cost"] >= report["closed_form_cost"] - report["discretization_allowance"] - 1e-4


def test_verify_laissez_faire_and_single_interval(tmp_path, capsys):
    params = "alpha = 0.3\nbeta = 1.0\ngamma = 0.99\nepsilon = 0.01\n"
    code, out = _run(["verify", "--config", _config(tmp_path, params)], capsys)
    assert code == 0 and json.loads(out.out)["best_cost"] == 0.0
    code, out = _run(["verify", "--config", _config(tmp_path), "--n", "1"], capsys)
    assert code == 0 and json.loads(out.out)["discretization_allowance"] > 0


def test_verify_exit_codes(tmp_path, capsys, monkeypatch):
    code, _ = _run(["verify", "--config", _config(tmp_path, extra="n = 1\nsearch_horizon = 1.0\n")], capsys)
    assert code == cli.EXIT_NUMERIC

    class Failing:
        def as_dict(self):
            return {"passed": False}

    monkeypatch.setattr(cli.verify, "brute_force_search", lambda *a, **k: Failing())
    code, _ = _run(["verify", "--config", _config(tmp_path)], capsys)
    assert code == cli.EXIT_GAP


def test_numeric_failure_exit(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise NumericError("solver gave up")

    monkeypatch.setattr(cli.sir_core, "simulate", boom)
    code, out = _run(["simulate", "--config", _config(tmp_path), "--policy", "laissez_faire"], capsys)
    assert code == cli.EXIT_NUMERIC and "solver gave up" in out.err


def test_orbit(tmp_path, capsys):
    code, _ = _run(["orbit", "--config", _config(tmp_path), "--policy", "optimal"], capsys)
    assert code == 0
    orbit = np.array(_rows(tmp_path / "out" / "orbit.csv")[1:], dtype=float)
    lf = np.array(_rows(tmp_path / "out" / "orbit_laissez_faire.csv")[1:], dtype=float)
    assert np.all(np.diff(orbit[:, 0]) < 0)
    plateau = (orbit[:, 0] < 0.69) & (orbit[:, 0] > 0.3)
    assert plateau.sum() > 20 and np.max(np.abs(orbit[plateau, 1] - 0.2)) <= 1e-6
    params = ModelParams(0.3, 1.0, 0.2, 0.01)
    expected = [sir_core.orbit_constant(params, 1.0, params.initial_state, x) for x in lf[:, 0]]
    assert np.max(np.abs(lf[:, 1] - expected)) <= 1e-8


def test_default_config_is_figure_parameters(tmp_path, capsys):
    code, out = _run(["optimal", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out.out)["tau1"] == pytest.approx(optimal.compute_tau1(ModelParams(0.3, 1.0, 0.2, 0.01)))


def test_runs_are_byte_identical(tmp_path, capsys):
    cfg = _config(tmp_path, extra="strategy = random_restart\nrestarts = 2\n")
    outputs = []
    for attempt in ("a", "b"):
        out_dir = tmp_path / attempt
        for command in ("simulate", "optimal", "compare", "verify", "orbit"):
            code, _ = _run([command, "--config", cfg, "--out", str(out_dir), "--seed", "5", "--n", "6"], capsys)
            assert code == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    assert outputs[0] == outputs[1]
    assert len(outputs[0]) == 8
