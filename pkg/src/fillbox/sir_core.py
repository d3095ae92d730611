"""Controlled SIR dynamics and the closed-form constant-policy formulas.

The system is

    x' = -b(t) x y
    y' =  b(t) x y - alpha y

integrated segment by segment with an embedded Runge-Kutta 4(5) pair and
restarted at every policy breakpoint, so each solver call sees a smooth
right-hand side. A third state accumulates the suppression cost
``(beta - b)_+``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .errors import ConfigError, EventNotFoundError, PolicyGapError, RootBracketError, SimulationError
from .params import EpidemicState, ModelParams, SimConfig
from .roots import bisect

if TYPE_CHECKING:
    from .policies import ControlPolicy


class Termination(str, enum.Enum):
    Y_BELOW_STOP = "y_below_stop"
    HORIZON_CAP = "horizon_cap"
    EVENT_HIT = "event_hit"


@dataclass(frozen=True)
class Crossing:
    """Stop condition: the first time ``variable`` reaches ``level``."""

    variable: str
    level: float

    def __post_init__(self) -> None:
        if self.variable not in ("x", "y"):
            raise ConfigError(f"crossing variable must be 'x' or 'y', got {self.variable!r}")
        if not 0 < self.level < 1:
            raise ConfigError(f"crossing level must lie in (0, 1), got {self.level}")

    @property
    def index(self) -> int:
        return 0 if self.variable == "x" else 1

    @property
    def label(self) -> str:
        return f"{self.variable}_reaches"


@dataclass(frozen=True)
class Event:
    label: str
    t: float
    x: float
    y: float


@dataclass
class _Piece:
    t0: float
    t1: float
    sol: object  # scipy OdeSolution


@dataclass
class Trajectory:
    """Sampled solution of the controlled system.

    ``b`` is left-continuous: the sample at a breakpoint carries the rate of
    the segment that ends there.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    b: np.ndarray
    cost: np.ndarray
    events: list[Event]
    terminated_by: Termination
    breakpoints: tuple[float, ...] = ()
    pieces: list[_Piece] = field(default_factory=list, repr=False)

    @property
    def final_state(self) -> EpidemicState:
        return EpidemicState(float(self.x[-1]), float(self.y[-1]))

    def rows(self):
        """Iterate ``(t, x, y, b, cumulative_cost)`` tuples."""
        return zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.b.tolist(), self.cost.tolist())

    def state_at(self, t: float) -> np.ndarray:
        """Dense-output ``(x, y, cost)`` at time ``t``."""
        for piece in self.pieces:
            if piece.t0 <= t <= piece.t1:
                return np.asarray(piece.sol(t))
        raise ValueError(f"t={t} outside the simulated span [0, {self.t[-1]}]")

    def max_y(self) -> float:
        """Largest infected share over the run, refined on the dense output."""
        best = float(np.max(self.y))
        for piece in self.pieces:
            nodes = np.asarray(piece.sol.ts)
            nodes = nodes[(nodes >= piece.t0) & (nodes <= piece.t1)]
            nodes = np.unique(np.concatenate([nodes, [piece.t0, piece.t1]]))
            ys = piece.sol(nodes)[1]
            j = int(np.argmax(ys))
            best = max(best, float(ys[j]))
            lo, hi = nodes[max(j - 1, 0)], nodes[min(j + 1, len(nodes) - 1)]
            if hi > lo:
                res = minimize_scalar(lambda s: -piece.sol(s)[1], bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-12})
                best = max(best, float(-res.fun))
        return best


def _segment_rhs(shape, alpha: float, beta: float):
    from .policies import Constant

    if isinstance(shape, Constant):
        b = shape.level
        shortfall = max(beta - b, 0.0)

        def rhs(t, s):
            inf = b * s[0] * s[1]
            return [-inf, inf - alpha * s[1], shortfall]
    else:
        rate = shape.rate

        def rhs(t, s):
            b = rate(t)
            inf = b * s[0] * s[1]
            return [-inf, inf - alpha * s[1], max(beta - b, 0.0)]

    return rhs


def _locate(sol, index: int, level: float, lo: float, hi: float) -> float:
    g = lambda s: float(sol(s)[index]) - level
    try:
        return bisect(g, lo, hi)
    except RootBracketError:
        return hi


def _grazing_crossing(sol, rhs, index: int, level: float, sign: float, lo: float, hi: float) -> Optional[float]:
    """First crossing hidden inside a single step (in and out again between two nodes).

    The solver only sees sign changes at step ends. For each step where the
    tracked component turns back toward the level, maximise ``sign*(s - level)``
    on the step; if it reaches zero, bisect for the first touch.
    """
    nodes = np.asarray(sol.ts)
    nodes = np.unique(np.concatenate([nodes[(nodes > lo) & (nodes < hi)], [lo, hi]]))
    if len(nodes) < 2:
        return None
    states = sol(nodes)
    slopes = np.array([sign * rhs(t, states[:, k])[index] for k, t in enumerate(nodes)])
    g = lambda t: sign * (float(sol(t)[index]) - level)
    for k in range(len(nodes) - 1):
        if not (slopes[k] > 0 >= slopes[k + 1]):
            continue
        a, b = float(nodes[k]), float(nodes[k + 1])
        res = minimize_scalar(lambda t: -g(t), bounds=(a, b), method="bounded", options={"xatol": 1e-13})
        t_top = float(res.x)
        if g(t_top) >= 0:
            return a if g(a) >= 0 else bisect(g, a, t_top)
    return None


def _run(params: ModelParams, policy: "ControlPolicy", init: EpidemicState, cfg: SimConfig,
         crossing: Optional[Crossing]) -> tuple[Trajectory, Optional[float]]:
    if not policy.covers(cfg.t_max):
        raise PolicyGapError(f"policy covers [0, {policy.horizon}] but the run needs [0, {cfg.t_max}]")
    alpha, beta = params.alpha, params.beta
    ends = [bp for bp in policy.breakpoints if bp < cfg.t_max] + [cfg.t_max]

    ts, xs, ys, bs, cs = [0.0], [init.x], [init.y], [policy.rate(0.0)], [0.0]
    events: list[Event] = []
    pieces: list[_Piece] = []
    crossed_breaks: list[float] = []

    if crossing is not None:
        start = (init.x, init.y)[crossing.index]
        if start == crossing.level:
            events.append(Event(crossing.label, 0.0, init.x, init.y))
            traj = Trajectory(*map(np.array, (ts, xs, ys, bs, cs)), events, Termination.EVENT_HIT)
            return traj, 0.0
        sign = 1.0 if start < crossing.level else -1.0

    state = np.array([init.x, init.y, 0.0])
    t0 = 0.0
    termination = Termination.HORIZON_CAP
    hit_time: Optional[float] = None

    for t1 in ends:
        seg = policy.segments[policy.segment_index(t1)]
        rhs = _segment_rhs(seg.shape, alpha, beta)

        def stop_low(t, s):
            return s[1] - cfg.y_stop

        stop_low.terminal = True
        stop_low.direction = -1
        evs = [stop_low]
        if crossing is not None:
            def reach(t, s, _i=crossing.index, _lvl=crossing.level, _sg=sign):
                return _sg * (s[_i] - _lvl)

            reach.terminal = True
            reach.direction = 1
            evs.append(reach)

        sol = solve_ivp(rhs, (t0, t1), state, method="RK45", rtol=cfg.rel_tol, atol=cfg.abs_tol,
                        max_step=cfg.max_step, dense_output=True, events=evs)
        if sol.status == -1:
            raise SimulationError(f"integration failed on [{t0}, {t1}]: {sol.message}")
        if not np.all(np.isfinite(sol.y)):
            raise SimulationError(f"non-finite state on [{t0}, {t1}]; check tolerances and max_step")

        t_stop = float(sol.t[-1])
        stop_kind = None
        t_low = t_hit = math.inf
        if sol.status == 1:
            t_low = sol.t_events[0][0] if len(sol.t_events[0]) else math.inf
            t_hit = sol.t_events[1][0] if crossing is not None and len(sol.t_events[1]) else math.inf
            if t_hit <= t_low:
                steps = np.asarray(sol.sol.ts)
                lo = float(steps[-2]) if len(steps) > 1 else t0
                t_stop = _locate(sol.sol, crossing.index, crossing.level, lo, float(t_hit))
                stop_kind = "hit"
            else:
                t_stop = float(t_low)
                stop_kind = "low"
        if crossing is not None:
            t_graze = _grazing_crossing(sol.sol, rhs, crossing.index, crossing.level, sign, t0, t_stop)
            if t_graze is not None and t_graze < t_stop:
                t_stop, stop_kind = t_graze, "hit"

        grid = np.arange(math.floor(t0 / cfg.output_dt) + 1, math.ceil(t_stop / cfg.output_dt)) * cfg.output_dt
        grid = grid[(grid > t0 + 1e-12) & (grid < t_stop - 1e-12)]
        sample_t = np.append(grid, t_stop)
        vals = sol.sol(sample_t)
        if not np.all(np.isfinite(vals)):
            raise SimulationError(f"non-finite dense output on [{t0}, {t_stop}]")
        ts.extend(sample_t.tolist())
        xs.extend(vals[0].tolist())
        ys.extend(vals[1].tolist())
        cs.extend(vals[2].tolist())
        bs.extend(seg.shape.rate(float(s)) for s in sample_t)
        pieces.append(_Piece(t0, t_stop, sol.sol))

        if stop_kind == "hit":
            termination = Termination.EVENT_HIT
            hit_time = t_stop
            events.append(Event(crossing.label, t_stop, float(vals[0][-1]), float(vals[1][-1])))
            break
        if stop_kind == "low":
            termination = Termination.Y_BELOW_STOP
            events.append(Event("y_below_stop", t_stop, float(vals[0][-1]), float(vals[1][-1])))
            break
        if t1 < cfg.t_max:
            crossed_breaks.append(t1)
        state = vals[:, -1].copy()
        t0 = t1

    traj = Trajectory(np.array(ts), np.array(xs), np.array(ys), np.array(bs), np.array(cs), events,
                      termination, tuple(crossed_breaks), pieces)
    return traj, hit_time


def simulate(params: ModelParams, policy: "ControlPolicy", init: Optional[EpidemicState] = None,
             cfg: Optional[SimConfig] = None) -> Trajectory:
    """Integrate the controlled SIR system under ``policy``.

    Runs until ``y`` drops below ``cfg.y_stop`` or ``t`` reaches ``cfg.t_max``.

    Raises:
        PolicyGapError: the policy stops before ``cfg.t_max``.
        SimulationError: the integrator failed or produced non-finite values.
    """
    traj, _ = _run(params, policy, init or params.initial_state, cfg or SimConfig(), None)
    return traj


def simulate_until(params: ModelParams, policy: "ControlPolicy", init: Optional[EpidemicState],
                   cfg: Optional[SimConfig], event: Crossing) -> tuple[Trajectory, float]:
    """Integrate until the first time ``event`` happens.

    The crossing is bracketed by the solver step that contains it and then
    bisected on the dense interpolant. The trajectory ends at the event.

    Raises:
        EventNotFoundError: the run stops (``t_max`` or ``y_stop``) first.
    """
    traj, hit = _run(params, policy, init or params.initial_state, cfg or SimConfig(), event)
    if hit is None:
        raise EventNotFoundError(
            f"event never occurs: {event.variable} does not reach {event.level} before "
            f"{traj.terminated_by.value} at t={traj.t[-1]:.6g}"
        )
    return traj, hit


def orbit_constant(params: ModelParams, delta: float, start: EpidemicState, x: float) -> float:
    """Infected share on the constant-``delta`` orbit through ``start`` when ``x`` is reached."""
    if x <= 0:
        raise ConfigError(f"x must be > 0, got {x}")
    if delta <= 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    return start.y + (params.alpha / delta) * math.log(x / start.x) - x + start.x


def peak_infected(params: ModelParams, delta: float) -> float:
    """Peak infected share from the initial state under constant ``b = delta``.

    If ``delta <= alpha/(1 - epsilon)`` the infected share never grows and the
    peak is the initial value ``epsilon``.
    """
    r = params.alpha / delta
    if delta <= params.alpha / params.x0:
        return params.epsilon
    return 1.0 + r * math.log(r / params.x0) - r


def limit_susceptible(params: ModelParams, delta: float, start: EpidemicState) -> float:
    """Long-run susceptible share under constant ``b = delta`` from ``start``."""
    if delta <= 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    r = params.alpha / delta
    total = start.x + start.y

    def g(x):
        return x - r * math.log(x / start.x) - total

    # g(lo) = lo > 0 by construction, g(start.x) = -start.y < 0
    lo = start.x * math.exp(-total / r)
    if lo <= 0.0:
        raise RootBracketError("lower bracket underflows; delta too large for double precision")
    try:
        return brentq(g, lo, start.x, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    except ValueError as exc:
        raise RootBracketError(str(exc)) from exc
