"""The "filling the box" policy and its closed-form cost.

Under laissez-faire the infected share first hits the capacity ``gamma`` at
``tau1``. From there the policy holds ``y = gamma`` exactly, which forces
``b(t) x(t) = alpha`` and makes ``x`` fall linearly at rate ``alpha*gamma``
until it reaches the herd threshold ``alpha/beta`` at ``tau2``; afterwards
the spread is unregulated again.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from . import sir_core
from .errors import ConfigError, NumericError
from .params import ModelParams, SimConfig
from .policies import DEFAULT_HORIZON, Constant, ControlPolicy, OptimalRamp, Segment, laissez_faire
from .roots import bisect

BOUNDARY_TOL = 1e-12
TAU1_XCHECK_TOL = 1e-6


class Regime(str, enum.Enum):
    LAISSEZ_FAIRE_OPTIMAL = "laissez_faire_optimal"
    CONSTRAINED = "constrained"


@dataclass(frozen=True)
class OptimalSolution:
    """Switching data of the optimal policy.

    In the laissez-faire regime the time fields are ``None`` and the cost is 0.
    """

    regime: Regime
    tau1: Optional[float] = None
    tau2: Optional[float] = None
    x_tau1: Optional[float] = None
    jump_level: Optional[float] = None
    cost_closed_form: float = 0.0


def laissez_faire_is_optimal(params: ModelParams) -> bool:
    """Whether unregulated spread already keeps ``y <= gamma``.

    Two algebraically equivalent tests are evaluated, the laissez-faire peak
    against ``gamma`` and the capacity threshold form; they must agree. Ties
    within ``BOUNDARY_TOL`` count as laissez-faire (zero cost either way).
    """
    a, b, g = params.alpha, params.beta, params.gamma
    if a >= b:
        return True
    peak = sir_core.peak_infected(params, b)
    threshold = (a / b) * (math.log(a / b) - 1.0 + b / a - math.log(params.x0))
    by_peak = peak <= g + BOUNDARY_TOL
    by_threshold = g >= threshold - BOUNDARY_TOL
    if by_peak != by_threshold:
        raise NumericError(f"peak test ({peak!r}) and threshold test ({threshold!r}) disagree at gamma={g!r}")
    return by_peak


def _require_constrained(params: ModelParams) -> None:
    if laissez_faire_is_optimal(params):
        raise ConfigError("laissez-faire is optimal for these parameters; there is no constrained phase")


def x_tau1_residual(params: ModelParams, x: float) -> float:
    """``x - (1 - gamma + (alpha/beta) ln(x/x0))``; zero at the capacity crossing."""
    return x - (1.0 - params.gamma + params.herd_threshold * math.log(x / params.x0))


def solve_x_tau1(params: ModelParams) -> float:
    """Susceptible share when laissez-faire first reaches ``gamma``.

    The residual is negative at ``alpha/beta`` (the laissez-faire peak exceeds
    ``gamma``) and positive at ``x0`` (``epsilon < gamma``) and increasing in
    between, so bisection on that bracket returns the larger root.
    """
    _require_constrained(params)
    return bisect(lambda x: x_tau1_residual(params, x), params.herd_threshold, params.x0)


def _tau1_event(params: ModelParams, cfg: Optional[SimConfig]) -> tuple[float, float]:
    _require_constrained(params)
    cfg = cfg or SimConfig()
    policy = laissez_faire(params, horizon=max(cfg.t_max, DEFAULT_HORIZON))
    traj, t_hit = sir_core.simulate_until(params, policy, params.initial_state, cfg,
                                          sir_core.Crossing("y", params.gamma))
    x_hit = float(traj.x[-1])
    x_root = solve_x_tau1(params)
    if abs(x_hit - x_root) > TAU1_XCHECK_TOL:
        raise NumericError(f"integrator crossing x={x_hit!r} disagrees with fixed point {x_root!r}")
    return t_hit, x_root


def compute_tau1(params: ModelParams, cfg: Optional[SimConfig] = None) -> float:
    """First time laissez-faire reaches the capacity, cross-checked against the root of the crossing equation."""
    return _tau1_event(params, cfg)[0]


def optimal_cost_closed_form(params: ModelParams) -> float:
    """Minimal suppression cost ``C(b*)`` in time units.

    Equals ``(1/gamma) (u - 1 - ln u)`` with ``u = beta x(tau1) / alpha``,
    the integral of ``beta - b*`` over the ramp.
    """
    _require_constrained(params)
    a, b, g = params.alpha, params.beta, params.gamma
    xs = solve_x_tau1(params)
    return (b / (a * g)) * (xs - (a / b) * math.log(xs)) + (math.log(a / b) - 1.0) / g


def optimal_cost_corollary(params: ModelParams) -> float:
    """Same minimum written without ``x(tau1)``, via the crossing equation."""
    _require_constrained(params)
    a, b, g = params.alpha, params.beta, params.gamma
    return (math.log(a / b) - 1.0 + b / a - math.log(params.x0)) / g - b / a


def minimal_cost(params: ModelParams) -> float:
    """Minimal cost in either regime (0 when laissez-faire is feasible)."""
    return 0.0 if laissez_faire_is_optimal(params) else optimal_cost_closed_form(params)


def build_optimal_policy(params: ModelParams, cfg: Optional[SimConfig] = None,
                         horizon: float = DEFAULT_HORIZON) -> tuple[ControlPolicy, OptimalSolution]:
    """Construct the optimal policy and its switching data."""
    if laissez_faire_is_optimal(params):
        policy = laissez_faire(params, horizon)
        return ControlPolicy(policy.segments, name="optimal"), OptimalSolution(Regime.LAISSEZ_FAIRE_OPTIMAL)
    a, b, g = params.alpha, params.beta, params.gamma
    tau1, x1 = _tau1_event(params, cfg)
    tau2 = tau1 + (x1 - params.herd_threshold) / (a * g)
    if not horizon > tau2:
        raise ConfigError(f"horizon {horizon} ends before the release time tau2={tau2}")
    ramp = OptimalRamp(b, g, tau2)
    policy = ControlPolicy(
        (Segment(0.0, tau1, Constant(b)), Segment(tau1, tau2, ramp), Segment(tau2, horizon, Constant(b))),
        name="optimal",
    )
    solution = OptimalSolution(
        regime=Regime.CONSTRAINED,
        tau1=tau1,
        tau2=tau2,
        x_tau1=x1,
        jump_level=a / x1,
        cost_closed_form=optimal_cost_closed_form(params),
    )
    return policy, solution
