"""Command-line front end: ``fillbox {simulate,optimal,compare,verify,orbit}``.

Configuration is an INI file with sections ``[params]``, ``[sim]`` and
``[run]``; command-line flags override ``[run]``. Outputs are CSV (17
significant digits) and JSON with a fixed key order, so repeated runs are
byte-identical.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 the
verification gap criterion failed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import optimal, policies, sir_core, verify
from .errors import ConfigError, NumericError
from .params import ModelParams, SimConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GAP = 4

TRAJECTORY_HEADER = ("t", "x", "y", "b", "cumulative_cost")
SUMMARY_KEYS = ("tau1", "tau2", "x_tau1", "jump_level", "cost_closed_form", "cost_numeric", "regime", "x_infinity")
COMPARE_HEADER = ("policy_name", "cost_numeric", "cost_closed_form", "feasible", "max_y", "x_infinity_estimate",
                  "horizon_capped", "terminated_by")
FIGURE2_HEADER = ("t", "y_optimal", "b_optimal", "y_flatten", "b_flatten")
ORBIT_HEADER = ("x", "y")
POLICY_FILE_HEADER = ("t_start", "t_end", "b")

FIGURE_PARAMS = {"alpha": 0.3, "beta": 1.0, "gamma": 0.2, "epsilon": 0.01}

_RUN_TYPES = {
    "horizon": float,
    "output_dir": str,
    "policy": str,
    "n": int,
    "strategy": str,
    "mode": str,
    "seed": int,
    "restarts": int,
    "search_horizon": float,
    "release": str,
}


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    sim: SimConfig
    horizon: float = policies.DEFAULT_HORIZON
    output_dir: str = "out"
    policy: str = "optimal"
    n: int = 16
    strategy: str = "coordinate_descent"
    mode: str = "reject"
    seed: int = 0
    restarts: int = verify.DEFAULT_RESTARTS
    search_horizon: Optional[float] = None
    release: str = "herd"

    def __post_init__(self) -> None:
        if not self.horizon >= self.sim.t_max:
            raise ConfigError(f"run.horizon={self.horizon} must be >= sim.t_max={self.sim.t_max}")
        if self.strategy not in verify.STRATEGIES:
            raise ConfigError(f"run.strategy must be one of {verify.STRATEGIES}, got {self.strategy!r}")
        if self.mode not in verify.MODES:
            raise ConfigError(f"run.mode must be one of {verify.MODES}, got {self.mode!r}")
        if self.release not in ("herd", "peak"):
            raise ConfigError(f"run.release must be 'herd' or 'peak', got {self.release!r}")
        if not 1 <= self.n <= verify.MAX_INTERVALS:
            raise ConfigError(f"run.n must lie in [1, {verify.MAX_INTERVALS}], got {self.n}")
        if self.seed < 0:
            raise ConfigError(f"run.seed must be >= 0, got {self.seed}")
        if self.restarts < 1:
            raise ConfigError(f"run.restarts must be >= 1, got {self.restarts}")


def _convert(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def load_config(path: Optional[str]) -> RunConfig:
    """Read and validate a config file; ``None`` gives the figure parameters.

    Raises:
        ConfigError: unreadable file, unknown section or key, bad value.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
    known = {"params": set(FIGURE_PARAMS), "sim": {f.name for f in fields(SimConfig)}, "run": set(_RUN_TYPES)}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in known[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    raw_params = dict(parser["params"]) if parser.has_section("params") else {}
    values = dict(FIGURE_PARAMS) if path is None else {}
    for key, raw in raw_params.items():
        values[key] = _convert("params", key, raw, float)
    missing = [k for k in FIGURE_PARAMS if k not in values]
    if missing:
        raise ConfigError(f"[params] is missing {', '.join(missing)}")
    params = ModelParams(**values)

    sim_values = {}
    if parser.has_section("sim"):
        for key, raw in parser["sim"].items():
            sim_values[key] = _convert("sim", key, raw, float)
    sim = SimConfig(**sim_values)

    run_values = {}
    if parser.has_section("run"):
        for key, raw in parser["run"].items():
            run_values[key] = _convert("run", key, raw, _RUN_TYPES[key])
    return RunConfig(params=params, sim=sim, **run_values)


# ---------------------------------------------------------------------------
# policies


def _read_policy_file(path: str) -> policies.ControlPolicy:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc.strerror}") from None
    if not rows or tuple(c.strip() for c in rows[0]) != POLICY_FILE_HEADER:
        raise ConfigError(f"policy file {path} must start with header {','.join(POLICY_FILE_HEADER)}")
    segs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ConfigError(f"policy file {path} line {lineno}: expected 3 columns")
        a, b, level = (_convert("policy file", f"line {lineno}", c, float) for c in row)
        segs.append(policies.Segment(a, b, policies.Constant(level)))
    if not segs:
        raise ConfigError(f"policy file {path} has no segments")
    return policies.ControlPolicy(tuple(segs), name=f"file:{Path(path).name}")


def build_policy(spec: str, cfg: RunConfig) -> tuple[policies.ControlPolicy, Optional[optimal.OptimalSolution]]:
    """Turn a policy spec into a policy (plus switching data for ``optimal``)."""
    params, horizon = cfg.params, cfg.horizon
    if spec == "laissez_faire":
        return policies.laissez_faire(params, horizon), None
    if spec == "flatten_curve":
        return policies.flatten_curve(params, horizon, cfg.sim, release=cfg.release), None
    if spec == "optimal":
        return optimal.build_optimal_policy(params, cfg.sim, horizon)
    if spec.startswith("constant:"):
        parts = spec.split(":")
        if len(parts) != 4:
            raise ConfigError(f"constant policy spec must be constant:<delta>:<t1>:<t2>, got {spec!r}")
        delta, t1, t2 = (_convert("policy", name, raw, float) for name, raw in zip(("delta", "t1", "t2"), parts[1:]))
        return policies.constant_shutdown(params, delta, t1, t2, horizon), None
    if spec.startswith("file:"):
        return _read_policy_file(spec[len("file:"):]), None
    raise ConfigError(f"unknown policy spec {spec!r}")


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    return format(float(v), ".17g")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, allow_nan=False)
        fh.write("\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _summary(cfg: RunConfig, spec: str, policy, solution, report: policies.CostReport) -> dict:
    regime = optimal.Regime.LAISSEZ_FAIRE_OPTIMAL if optimal.laissez_faire_is_optimal(cfg.params) \
        else optimal.Regime.CONSTRAINED
    closed = None
    if spec == "optimal":
        closed = solution.cost_closed_form
    elif spec == "laissez_faire":
        closed = 0.0
    sol = solution or optimal.OptimalSolution(regime)
    out = {
        "tau1": sol.tau1,
        "tau2": sol.tau2,
        "x_tau1": sol.x_tau1,
        "jump_level": sol.jump_level,
        "cost_closed_form": closed,
        "cost_numeric": report.cost_numeric,
        "regime": regime.value,
        "x_infinity": report.x_infinity_estimate,
    }
    assert tuple(out) == SUMMARY_KEYS
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig) -> dict:
    policy, solution = build_policy(cfg.policy, cfg)
    traj = sir_core.simulate(cfg.params, policy, None, cfg.sim)
    report = policies.evaluate_cost(cfg.params, policy, cfg.sim)
    out = _out_dir(cfg)
    _write_csv(out / "trajectory.csv", TRAJECTORY_HEADER, traj.rows())
    summary = _summary(cfg, cfg.policy, policy, solution, report)
    _write_json(out / "summary.json", summary)
    return summary


def cmd_optimal(cfg: RunConfig) -> dict:
    policy, solution = optimal.build_optimal_policy(cfg.params, cfg.sim, cfg.horizon)
    report = policies.evaluate_cost(cfg.params, policy, cfg.sim)
    summary = _summary(cfg, "optimal", policy, solution, report)
    _write_json(_out_dir(cfg) / "summary.json", summary)
    return summary


def _sample(traj: sir_core.Trajectory, policy: policies.ControlPolicy, t: float) -> tuple[float, float]:
    if t > traj.t[-1]:
        # past the y_stop cut the infected share is negligible and b is the tail rate
        return float(traj.y[-1]), policy.rate(t)
    return float(traj.state_at(t)[1]), policy.rate(t)


def cmd_compare(cfg: RunConfig) -> dict:
    params = cfg.params
    opt_policy, solution = optimal.build_optimal_policy(params, cfg.sim, cfg.horizon)
    if optimal.laissez_faire_is_optimal(params):
        # nothing to flatten: the flattened curve is the unregulated one
        flat_policy = replace(policies.laissez_faire(params, cfg.horizon), name="flatten_curve")
    else:
        flat_policy = policies.flatten_curve(params, cfg.horizon, cfg.sim, release=cfg.release)
    lf_policy = policies.laissez_faire(params, cfg.horizon)

    reports = [
        policies.evaluate_cost(params, opt_policy, cfg.sim, cost_closed_form=solution.cost_closed_form),
        policies.evaluate_cost(params, flat_policy, cfg.sim),
        policies.evaluate_cost(params, lf_policy, cfg.sim, cost_closed_form=0.0),
    ]
    out = _out_dir(cfg)
    _write_csv(out / "compare.csv", COMPARE_HEADER, ([r.as_dict()[k] for k in COMPARE_HEADER] for r in reports))
    payload = {"params": params.__dict__, "reports": [r.as_dict() for r in reports]}
    _write_json(out / "compare.json", payload)

    opt_traj = sir_core.simulate(params, opt_policy, None, cfg.sim)
    flat_traj = sir_core.simulate(params, flat_policy, None, cfg.sim)
    t_end = max(opt_traj.t[-1], flat_traj.t[-1])
    steps = int(math.floor(t_end / cfg.sim.output_dt + 1e-9))
    rows = []
    for k in range(steps + 1):
        t = k * cfg.sim.output_dt
        rows.append((t, *_sample(opt_traj, opt_policy, t), *_sample(flat_traj, flat_policy, t)))
    _write_csv(out / "figure2.csv", FIGURE2_HEADER, rows)
    return payload


def cmd_verify(cfg: RunConfig) -> dict:
    report = verify.brute_force_search(
        cfg.params, cfg.n, cfg.search_horizon, cfg.strategy, cfg.sim,
        mode=cfg.mode, seed=cfg.seed, restarts=cfg.restarts,
    )
    payload = report.as_dict()
    _write_json(_out_dir(cfg) / "verify.json", payload)
    return payload


def cmd_orbit(cfg: RunConfig) -> dict:
    policy, _ = build_policy(cfg.policy, cfg)
    traj = sir_core.simulate(cfg.params, policy, None, cfg.sim)
    lf = sir_core.simulate(cfg.params, policies.laissez_faire(cfg.params, cfg.horizon), None, cfg.sim)
    out = _out_dir(cfg)
    _write_csv(out / "orbit.csv", ORBIT_HEADER, zip(traj.x.tolist(), traj.y.tolist()))
    _write_csv(out / "orbit_laissez_faire.csv", ORBIT_HEADER, zip(lf.x.tolist(), lf.y.tolist()))
    return {"policy": policy.name, "points": len(traj.t), "laissez_faire_points": len(lf.t)}


COMMANDS = {
    "simulate": cmd_simulate,
    "optimal": cmd_optimal,
    "compare": cmd_compare,
    "verify": cmd_verify,
    "orbit": cmd_orbit,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fillbox", description="Optimal epidemic suppression under an ICU cap.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="INI file with [params], [sim], [run] (default: figure parameters)")
    parser.add_argument("--policy", help="laissez_faire | flatten_curve | optimal | constant:<d>:<t1>:<t2> | file:<csv>")
    parser.add_argument("--out", help="output directory (overrides run.output_dir)")
    parser.add_argument("--seed", type=int, help="search seed (overrides run.seed)")
    parser.add_argument("--n", type=int, help="search intervals N (overrides run.n)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("policy", args.policy), ("output_dir", args.out), ("seed", args.seed),
                                       ("n", args.n)) if v is not None}
        if overrides:
            cfg = replace(cfg, **overrides)
        payload = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(_clean(payload), indent=2))
    if args.command == "verify" and not payload["passed"]:
        print("verification gap criterion failed", file=sys.stderr)
        return EXIT_GAP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
