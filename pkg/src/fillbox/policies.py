"""Control policies b(t), baseline policies and cost evaluation.

A policy is an ordered list of segments covering ``[0, horizon]``. The first
segment is closed at 0, every later one is ``(t_start, t_end]``, which keeps
``b`` left-continuous with right limits at each breakpoint.
"""

from __future__ import annotations

import bisect as _bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import quad

from . import sir_core
from .errors import ConfigError, NumericError
from .params import ModelParams, SimConfig
from .roots import bisect

DEFAULT_HORIZON = 400.0
FEASIBILITY_TOL = 1e-7


@dataclass(frozen=True)
class Constant:
    level: float

    def rate(self, t: float) -> float:
        return self.level

    def shortfall(self, beta: float, t0: float, t1: float) -> float:
        gap = beta - self.level
        if gap <= 0:
            return 0.0
        return gap * (t1 - t0)


@dataclass(frozen=True)
class OptimalRamp:
    """Constraint-riding ramp ``beta / (1 + beta*gamma*(tau2 - t))``.

    Along it ``b(t) = alpha / x(t)`` when ``y`` is held at ``gamma``; it
    reaches ``beta`` exactly at ``tau2``.
    """

    beta: float
    gamma: float
    tau2: float

    def rate(self, t: float) -> float:
        return self.beta / (1.0 + self.beta * self.gamma * (self.tau2 - t))

    def shortfall(self, beta: float, t0: float, t1: float) -> float:
        # closed-form integral of (beta - rate)_+; the ramp is >= beta after tau2
        hi = min(t1, self.tau2)
        if hi <= t0:
            return 0.0
        if beta != self.beta:
            raise ConfigError("ramp shortfall requires the ramp's own beta")
        c = self.beta * self.gamma
        return beta * (hi - t0) - math.log((1.0 + c * (self.tau2 - t0)) / (1.0 + c * (self.tau2 - hi))) / self.gamma


@dataclass(frozen=True)
class Shifted:
    """Another shape moved up or down by a constant ``offset``, floored at 0."""

    base: Union[Constant, OptimalRamp]
    offset: float

    def rate(self, t: float) -> float:
        return max(self.base.rate(t) + self.offset, 0.0)

    def shortfall(self, beta: float, t0: float, t1: float) -> float:
        val, _ = quad(lambda s: max(beta - self.rate(s), 0.0), t0, t1, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val


Shape = Union[Constant, OptimalRamp, Shifted]


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    shape: Shape

    def shortfall(self, beta: float) -> float:
        return self.shape.shortfall(beta, self.t_start, self.t_end)


@dataclass(frozen=True)
class ControlPolicy:
    """Piecewise transmission policy with finitely many segments."""

    segments: tuple[Segment, ...]
    name: str = "custom"
    _ends: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ConfigError("a policy needs at least one segment")
        if segs[0].t_start != 0.0:
            raise ConfigError(f"policy must start at t=0, starts at {segs[0].t_start}")
        for prev, seg in zip(segs, segs[1:]):
            if seg.t_start != prev.t_end:
                raise ConfigError(f"segments not contiguous at t={prev.t_end} / {seg.t_start}")
        for seg in segs:
            if not seg.t_end > seg.t_start:
                raise ConfigError(f"empty or reversed segment [{seg.t_start}, {seg.t_end}]")
            ends = [seg.t_start, seg.t_end] if math.isfinite(seg.t_end) else [seg.t_start]
            if isinstance(seg.shape, OptimalRamp):
                ends.append(min(seg.t_end, seg.shape.tau2))
            for t in ends:
                level = seg.shape.rate(t)
                if not level >= 0 or not math.isfinite(level):
                    raise ConfigError(f"policy level {level!r} at t={t} is not a finite rate >= 0")
        object.__setattr__(self, "_ends", tuple(s.t_end for s in segs))

    @property
    def horizon(self) -> float:
        return self.segments[-1].t_end

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Interior segment boundaries, where the integrator must restart."""
        return self._ends[:-1]

    def covers(self, t_end: float) -> bool:
        return self.horizon >= t_end

    def segment_index(self, t: float) -> int:
        if t < 0 or t > self.horizon:
            raise ConfigError(f"t={t} outside policy span [0, {self.horizon}]")
        return min(_bisect.bisect_left(self._ends, t), len(self._ends) - 1)

    def rate(self, t: float) -> float:
        return self.segments[self.segment_index(t)].shape.rate(t)

    def segment_costs(self, beta: float, t_end: Optional[float] = None) -> list[float]:
        """Exact ``(beta - b)_+`` integral of each segment, optionally cut at ``t_end``."""
        out = []
        for seg in self.segments:
            hi = seg.t_end if t_end is None else min(seg.t_end, t_end)
            out.append(seg.shape.shortfall(beta, seg.t_start, hi) if hi > seg.t_start else 0.0)
        return out

    def cost(self, beta: float, t_end: Optional[float] = None) -> float:
        return math.fsum(self.segment_costs(beta, t_end))


# ---------------------------------------------------------------------------
# baseline policies


def laissez_faire(params: ModelParams, horizon: float = DEFAULT_HORIZON) -> ControlPolicy:
    """Unregulated spread, ``b(t) = beta``; costs nothing."""
    return ControlPolicy((Segment(0.0, horizon, Constant(params.beta)),), name="laissez_faire")


def constant_shutdown(
    params: ModelParams, delta: float, t_start: float, t_end: float, horizon: float = DEFAULT_HORIZON
) -> ControlPolicy:
    """Hold ``b = delta`` on ``[t_start, t_end]`` and ``beta`` elsewhere."""
    if not 0 <= t_start < t_end <= horizon:
        raise ConfigError(f"need 0 <= t_start < t_end <= horizon, got {t_start}, {t_end}, {horizon}")
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta}")
    segs = []
    if t_start > 0:
        segs.append(Segment(0.0, t_start, Constant(params.beta)))
    segs.append(Segment(t_start, t_end, Constant(delta)))
    if t_end < horizon:
        segs.append(Segment(t_end, horizon, Constant(params.beta)))
    return ControlPolicy(tuple(segs), name="constant_shutdown")


def piecewise_constant(
    times: Sequence[float], levels: Sequence[float], tail: float, horizon: float = DEFAULT_HORIZON, name: str = "piecewise"
) -> ControlPolicy:
    """Constant ``levels[k]`` on ``(times[k], times[k+1]]``, then ``tail`` up to ``horizon``."""
    if len(times) != len(levels) + 1:
        raise ConfigError("need one more breakpoint than levels")
    segs = [Segment(float(a), float(b), Constant(float(v))) for a, b, v in zip(times, times[1:], levels)]
    if times[-1] < horizon:
        segs.append(Segment(float(times[-1]), horizon, Constant(float(tail))))
    return ControlPolicy(tuple(segs), name=name)


def flatten_level(params: ModelParams) -> float:
    """Constant rate ``delta`` whose laissez-faire-style peak equals ``gamma``."""
    lo = params.alpha / params.x0
    if sir_core.peak_infected(params, params.beta) <= params.gamma:
        raise ConfigError("laissez-faire already respects the ICU constraint; nothing to flatten")
    return bisect(lambda d: sir_core.peak_infected(params, d) - params.gamma, lo, params.beta)


def flatten_curve(
    params: ModelParams,
    horizon: float = DEFAULT_HORIZON,
    cfg: Optional[SimConfig] = None,
    release: str = "herd",
) -> ControlPolicy:
    """Flatten the curve: hold ``delta`` (peak exactly ``gamma``), then release to ``beta``.

    ``release="herd"`` returns to ``beta`` once ``x`` falls to ``alpha/beta``,
    after which ``y`` can only decrease. ``release="peak"`` returns at the top
    of the ``delta`` wave (``x = alpha/delta``); since ``alpha/delta`` exceeds
    ``alpha/beta`` this triggers a second wave above ``gamma``.
    """
    delta = flatten_level(params)
    if release == "herd":
        level = params.herd_threshold
    elif release == "peak":
        level = params.alpha / delta
    else:
        raise ConfigError(f"release must be 'herd' or 'peak', got {release!r}")
    cfg = cfg or SimConfig(t_max=horizon)
    hold = ControlPolicy((Segment(0.0, max(horizon, cfg.t_max), Constant(delta)),))
    _, t_release = sir_core.simulate_until(params, hold, params.initial_state, cfg, sir_core.Crossing("x", level))
    return ControlPolicy(
        (Segment(0.0, t_release, Constant(delta)), Segment(t_release, horizon, Constant(params.beta))),
        name="flatten_curve",
    )


# ---------------------------------------------------------------------------
# cost evaluation


@dataclass(frozen=True)
class CostReport:
    """Outcome of running one policy to the end of the horizon.

    ``horizon_capped`` flags runs whose cost integrand was still positive at
    the cut, i.e. policies whose true cost exceeds what was integrated.
    """

    policy_name: str
    cost_numeric: float
    cost_closed_form: Optional[float]
    feasible: bool
    max_y: float
    x_infinity_estimate: float
    horizon_capped: bool
    terminated_by: str

    def as_dict(self) -> dict:
        return {
            "policy_name": self.policy_name,
            "cost_numeric": self.cost_numeric,
            "cost_closed_form": self.cost_closed_form,
            "feasible": self.feasible,
            "max_y": self.max_y,
            "x_infinity_estimate": self.x_infinity_estimate,
            "horizon_capped": self.horizon_capped,
            "terminated_by": self.terminated_by,
        }


def evaluate_cost(
    params: ModelParams,
    policy: ControlPolicy,
    cfg: Optional[SimConfig] = None,
    feasibility_tol: float = FEASIBILITY_TOL,
    cost_closed_form: Optional[float] = None,
) -> CostReport:
    """Simulate ``policy`` and report its cost, peak and feasibility."""
    cfg = cfg or SimConfig(t_max=min(policy.horizon, DEFAULT_HORIZON))
    traj = sir_core.simulate(params, policy, params.initial_state, cfg)
    t_end = float(traj.t[-1])
    b_end = float(traj.b[-1])
    capped = traj.terminated_by == sir_core.Termination.HORIZON_CAP and b_end < params.beta
    if b_end > 0:
        try:
            x_inf = sir_core.limit_susceptible(params, b_end, traj.final_state)
        except NumericError:
            x_inf = float(traj.x[-1])
    else:
        x_inf = float(traj.x[-1])
    max_y = traj.max_y()
    return CostReport(
        policy_name=policy.name,
        cost_numeric=float(traj.cost[-1]),
        cost_closed_form=cost_closed_form,
        feasible=bool(max_y <= params.gamma + feasibility_tol),
        max_y=max_y,
        x_infinity_estimate=float(x_inf),
        horizon_capped=bool(capped and t_end > 0),
        terminated_by=traj.terminated_by.value,
    )


def sample_policy(policy: ControlPolicy, t: np.ndarray) -> np.ndarray:
    return np.array([policy.rate(float(s)) for s in t])
