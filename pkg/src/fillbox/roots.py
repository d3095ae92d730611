"""Bracketed bisection used wherever a guaranteed bracket is available."""

from __future__ import annotations

from typing import Callable

from .errors import RootBracketError


def bisect(f: Callable[[float], float], lo: float, hi: float, xtol: float = 0.0, maxiter: int = 400) -> float:
    """Locate a sign change of ``f`` in ``[lo, hi]``.

    Halves the bracket until its width is at most ``xtol`` or the midpoint
    can no longer be distinguished from an endpoint in floating point, so the
    default ``xtol=0`` runs to machine resolution.

    Raises:
        RootBracketError: ``f(lo)`` and ``f(hi)`` have the same strict sign.
    """
    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0.0) == (f_hi > 0.0):
        raise RootBracketError(f"no sign change on [{lo!r}, {hi!r}]: f={f_lo!r}, {f_hi!r}")
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= xtol:
            break
        f_mid = f(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    # return the endpoint with the smaller residual
    return lo if abs(f_lo) <= abs(f(hi)) else hi
