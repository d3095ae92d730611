"""Phase-space view of a policy: the infected share as a function ``y = phi(x)``.

For a policy that never stops transmission, ``x`` decreases strictly, so each
susceptible level is visited once and the trajectory collapses to a curve
``phi``. A stretch with ``b = 0`` freezes ``x`` while ``y`` decays; it shows up
as an upward jump of ``phi`` at that ``x`` (reading ``x`` left to right).

The suppression cost is recovered from ``phi`` alone as

    J(phi) = int L(xi, phi, phi') dxi + (beta/alpha) sum ln(phi(u) / phi(u-))
    L      = (beta/alpha) ((1 + phi')/phi - alpha/(beta xi phi))_+

with ``phi'`` the right derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import ConfigError, NumericError, RootBracketError
from .optimal import _require_constrained
from .params import ModelParams, SimConfig
from .sir_core import Termination, Trajectory


@dataclass(frozen=True)
class Jump:
    """Upward discontinuity of ``phi`` at ``x``: ``phi(x-) = left_limit < phi(x) = value``."""

    x: float
    left_limit: float
    value: float


@dataclass(frozen=True)
class PhaseFunction:
    """Sampled ``phi`` on a strictly decreasing ``x`` grid.

    ``values[k]`` is ``phi(grid[k])``; at a jump location it is the value
    *at* the point, and the matching ``Jump`` carries the left limit.
    ``kinks`` lists ``x`` positions where ``phi'`` may be discontinuous.
    """

    grid: np.ndarray
    values: np.ndarray
    jumps: tuple[Jump, ...] = ()
    kinks: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or grid.shape != values.shape or len(grid) < 2:
            raise ConfigError("grid and values must be 1-d arrays of equal length >= 2")
        if not np.all(np.diff(grid) < 0):
            raise ConfigError("phase grid must be strictly decreasing")

    def upper_values(self) -> np.ndarray:
        """Value approached from below at each grid point (left limit where it jumps)."""
        upper = self.values.copy()
        index = {float(x): k for k, x in enumerate(self.grid)}
        for jump in self.jumps:
            upper[index[jump.x]] = jump.left_limit
        return upper

    def right_derivatives(self) -> np.ndarray:
        """One-sided difference slope on each interval ``[grid[k+1], grid[k]]``."""
        upper = self.upper_values()
        return (upper[:-1] - self.values[1:]) / (self.grid[:-1] - self.grid[1:])


def to_phase(trajectory: Trajectory, zero_tol: float = 0.0) -> PhaseFunction:
    """Collapse a trajectory onto ``y = phi(x)``.

    Sample intervals with ``b <= zero_tol`` are zero-transmission stretches;
    each maximal run of them becomes one ``Jump``.

    Raises:
        NumericError: ``x`` fails to decrease on an interval with ``b > 0``.
    """
    t, x, y, b = trajectory.t, trajectory.x, trajectory.y, trajectory.b
    grid: list[float] = [float(x[0])]
    vals: list[float] = [float(y[0])]
    jumps: list[Jump] = []
    run_start: Optional[int] = None
    for k in range(1, len(t)):
        if b[k] <= zero_tol:
            if run_start is None:
                run_start = k - 1
            continue
        if run_start is not None:
            # left limit at the frozen x is the value where the stretch ends
            jumps.append(Jump(float(x[run_start]), float(y[k - 1]), float(y[run_start])))
            run_start = None
        if not x[k] < grid[-1]:
            raise NumericError(f"x does not decrease at t={t[k]!r} although b={b[k]!r} > 0")
        grid.append(float(x[k]))
        vals.append(float(y[k]))
    if run_start is not None:
        # a zero stretch at the very end has no point to its left; store its end value
        jumps.append(Jump(float(x[run_start]), float(y[-1]), float(y[run_start])))
    jump_xs = {j.x for j in jumps}
    kinks = []
    for tb in trajectory.breakpoints:
        k = int(np.searchsorted(t, tb))
        if k < len(t) and t[k] == tb and float(x[k]) not in jump_xs:
            kinks.append(float(x[k]))
    return PhaseFunction(np.array(grid), np.array(vals), tuple(jumps), tuple(kinks))


def phase_cost(params: ModelParams, phi: PhaseFunction) -> float:
    """Cost functional ``J(phi)``; equals the time-domain cost of the underlying policy.

    Each grid interval contributes its secant slope and mean ``phi``, with the
    ``alpha/(beta xi)`` term averaged exactly, so laissez-faire arcs give zero
    up to rounding. The positive part is taken after the integrand is formed.
    """
    if np.any(phi.values <= 0) or any(j.left_limit <= 0 for j in phi.jumps):
        raise NumericError("phase function must be positive everywhere")
    a, b = params.alpha, params.beta
    upper = phi.upper_values()
    lower = phi.values[1:]
    width = phi.grid[:-1] - phi.grid[1:]
    slope = (upper[:-1] - lower) / width
    # interval mean of alpha/(beta xi), integrated exactly
    herd_mean = (a / b) * np.log(phi.grid[:-1] / phi.grid[1:]) / width
    mid_phi = 0.5 * (upper[:-1] + lower)
    integrand = (b / a) * np.maximum((1.0 + slope - herd_mean) / mid_phi, 0.0)
    running = math.fsum((integrand * width).tolist())
    jumps = math.fsum(math.log(j.value / j.left_limit) for j in phi.jumps)
    return running + (b / a) * jumps


# ---------------------------------------------------------------------------
# optimal phase density


def solve_x_star(params: ModelParams) -> float:
    """Switch-on point of the optimal phase density.

    Root in ``[alpha/beta, x0]`` of ``x - (alpha/beta) ln x = 1 - gamma - (alpha/beta) ln x0``.
    """
    _require_constrained(params)
    r = params.herd_threshold
    rhs = 1.0 - params.gamma - r * math.log(params.x0)
    try:
        return brentq(lambda x: x - r * math.log(x) - rhs, r, params.x0, xtol=1e-16,
                      rtol=4 * np.finfo(float).eps, maxiter=300)
    except ValueError as exc:
        raise RootBracketError(str(exc)) from exc


def _excess(params: ModelParams, x: float, x_star: float) -> float:
    # laissez-faire orbit drop from x_star to x: gamma - phi*(x)
    return x - x_star - params.herd_threshold * math.log(x / x_star)


def optimal_phase_density(params: ModelParams, x: float, x_star: Optional[float] = None) -> float:
    """Optimal log-density ``f* = (ln phi*)'`` at ``x`` in ``[alpha/beta, x0]``.

    Zero up to ``x*``; beyond it, the slope of the laissez-faire orbit through
    ``(x*, gamma)`` divided by the orbit height.
    """
    r = params.herd_threshold
    if not r - 1e-12 <= x <= params.x0 + 1e-12:
        raise ConfigError(f"x={x} outside [{r}, {params.x0}]")
    xs = solve_x_star(params) if x_star is None else x_star
    if x <= xs:
        return 0.0
    height = params.gamma - _excess(params, x, xs)
    if height <= 0:
        raise NumericError(f"phi* would leave its domain at x={x} (height {height!r})")
    return -(1.0 - r / x) / height


def phase_log_ratio(params: ModelParams, x: float, x_star: Optional[float] = None) -> float:
    """``F(x) = int_{alpha/beta}^x f*`` by adaptive quadrature, split at ``x*``."""
    xs = solve_x_star(params) if x_star is None else x_star
    lo = params.herd_threshold
    if x <= xs:
        return 0.0
    val, _ = quad(lambda u: optimal_phase_density(params, u, xs), max(lo, xs), x, epsabs=1e-14, epsrel=1e-13,
                  limit=200)
    return val


def nu_density(params: ModelParams, x: float, log_ratio: float) -> float:
    """``nu_F(x) = (1/gamma) (1 - alpha/(beta x)) exp(-F(x))``."""
    return (1.0 - params.herd_threshold / x) * math.exp(-log_ratio) / params.gamma


def optimal_phase_function(params: ModelParams, n: int = 4001) -> PhaseFunction:
    """``phi* = gamma exp(F)`` sampled on ``[alpha/beta, x0]`` with ``x*`` on the grid.

    Flat at ``gamma`` below ``x*``, the laissez-faire orbit through
    ``(x*, gamma)`` above it.
    """
    xs = solve_x_star(params)
    lo, hi = params.herd_threshold, params.x0
    n_low = max(2, int(round(n * (xs - lo) / (hi - lo))))
    n_high = max(2, n - n_low + 1)
    grid = np.concatenate([np.linspace(hi, xs, n_high), np.linspace(xs, lo, n_low)[1:]])
    values = np.where(grid <= xs, params.gamma,
                      params.gamma - np.array([_excess(params, float(u), xs) for u in grid]))
    return PhaseFunction(grid, values, kinks=(xs,))


def optimal_phase_cost(params: ModelParams, tol: float = 1e-10, n0: int = 1001, max_n: int = 2_000_001) -> float:
    """``J(phi*)`` with grid doubling until successive values change by less than ``tol``."""
    n = n0
    prev = phase_cost(params, optimal_phase_function(params, n))
    while n < max_n:
        n = 2 * n - 1
        cur = phase_cost(params, optimal_phase_function(params, n))
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    raise NumericError(f"phase cost did not settle to {tol} by n={n}")


# ---------------------------------------------------------------------------
# policy reconstruction


def reconstruct_policy(params: ModelParams, phi: PhaseFunction, cfg: Optional[SimConfig] = None) -> Trajectory:
    """Recover ``x(t)``, ``y(t)`` and ``b(t)`` from a jump-free phase function.

    ``phi`` is interpolated by a cubic spline on each smooth piece (split at
    the recorded kinks) and ``x' = -alpha phi(x) / (1 + phi'(x))`` is integrated
    from ``x0``; then ``y = phi(x)`` and ``b = alpha / (x (1 + phi'(x)))``.

    Raises:
        ConfigError: ``phi`` has jumps.
        NumericError: ``1 + phi'`` is not positive somewhere along the way.
    """
    if phi.jumps:
        raise ConfigError("reconstruction needs a jump-free phase function")
    cfg = cfg or SimConfig()
    a, b_max = params.alpha, params.beta
    grid, values = phi.grid, phi.values
    cuts = sorted({float(k) for k in phi.kinks if grid[-1] < k < grid[0]}, reverse=True)
    bounds = [float(grid[0]), *cuts, float(grid[-1])]

    splines = []
    for hi, lo in zip(bounds, bounds[1:]):
        mask = (grid <= hi) & (grid >= lo)
        gx, gv = grid[mask][::-1], values[mask][::-1]
        if len(gx) < 2:
            raise ConfigError(f"no samples on phase piece [{lo}, {hi}]")
        kind = "not-a-knot" if len(gx) >= 4 else "natural"
        splines.append((lo, hi, CubicSpline(gx, gv, bc_type=kind)))

    ts, xs, ys, bs = [0.0], [float(grid[0])], [float(values[0])], []
    t0, x_start = 0.0, float(grid[0])
    for lo, hi, spline in splines:
        dspline = spline.derivative()

        def rhs(t, s, _sp=spline, _dsp=dspline):
            slope = 1.0 + float(_dsp(s[0]))
            if slope <= 0:
                raise NumericError(f"1 + phi' = {slope!r} <= 0 at x={s[0]!r}")
            return [-a * float(_sp(s[0])) / slope]

        def at_low(t, s, _lo=lo):
            return s[0] - _lo

        at_low.terminal = True
        at_low.direction = -1
        # x can approach the end of the grid only asymptotically, so cap the time
        sol = solve_ivp(rhs, (t0, t0 + cfg.t_max), [x_start], method="RK45", rtol=cfg.rel_tol, atol=cfg.abs_tol,
                        max_step=cfg.max_step, dense_output=True, events=[at_low])
        t_end = float(sol.t[-1])
        sample_t = np.arange(math.floor(t0 / cfg.output_dt) + 1, math.ceil(t_end / cfg.output_dt)) * cfg.output_dt
        sample_t = np.append(sample_t[(sample_t > t0 + 1e-12) & (sample_t < t_end - 1e-12)], t_end)
        sx = sol.sol(sample_t)[0]
        ts.extend(sample_t.tolist())
        xs.extend(sx.tolist())
        ys.extend(spline(sx).tolist())
        # right derivative: at a piece's upper end use this piece's slope
        bs.extend((a / (sx * (1.0 + dspline(sx)))).tolist())
        t0, x_start = t_end, float(sx[-1])
        if sol.status != 1:
            break
    first_slope = 1.0 + float(splines[0][2].derivative()(grid[0]))
    bs.insert(0, a / (grid[0] * first_slope))

    t_arr, b_arr = np.array(ts), np.array(bs)
    short = np.maximum(b_max - b_arr, 0.0)
    cost = np.concatenate([[0.0], np.cumsum(0.5 * (short[1:] + short[:-1]) * np.diff(t_arr))])
    return Trajectory(t_arr, np.array(xs), np.array(ys), b_arr, cost, [], Termination.HORIZON_CAP)


def density_check(params: ModelParams, points: Sequence[float]) -> np.ndarray:
    """``f* + nu_F`` at ``points``; non-positive on ``[x*, x0]``, zero there up to quadrature error."""
    xs = solve_x_star(params)
    out = []
    for x in points:
        F = phase_log_ratio(params, float(x), xs)
        out.append(optimal_phase_density(params, float(x), xs) + nu_density(params, float(x), F))
    return np.array(out)
