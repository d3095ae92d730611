"""Model constants, epidemic states and integrator settings."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ModelParams:
    """Epidemic constants of the controlled SIR model.

    Attributes:
        alpha: Removal rate of infected individuals (1/time).
        beta: Unregulated transmission rate (1/time).
        gamma: ICU capacity as a population share.
        epsilon: Initial infected share; the susceptible share starts at
            ``1 - epsilon``.
    """

    alpha: float
    beta: float
    gamma: float
    epsilon: float

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma", "epsilon"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(f"{name} must be a finite number, got {value!r}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    @property
    def x0(self) -> float:
        return 1.0 - self.epsilon

    @property
    def y0(self) -> float:
        return self.epsilon

    @property
    def herd_threshold(self) -> float:
        """Susceptible share ``alpha/beta`` below which y falls under laissez-faire."""
        return self.alpha / self.beta

    @property
    def initial_state(self) -> EpidemicState:
        return EpidemicState(self.x0, self.y0)

    @property
    def is_interesting(self) -> bool:
        """True when the initial infection is below capacity and can grow."""
        return self.epsilon < self.gamma and self.alpha < self.beta


@dataclass(frozen=True)
class EpidemicState:
    """A point ``(x, y)`` of the simplex: susceptible and infected shares."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (0 < self.x < 1 and 0 < self.y < 1):
            raise ConfigError(f"state shares must lie in (0, 1), got x={self.x}, y={self.y}")
        if self.x + self.y > 1 + 1e-15:
            raise ConfigError(f"state violates x + y <= 1: x={self.x}, y={self.y}")


@dataclass(frozen=True)
class SimConfig:
    """Integrator tolerances and truncation rules.

    The infinite horizon is cut at ``t_max`` or as soon as ``y`` drops below
    ``y_stop``, whichever comes first.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 1.0
    y_stop: float = 1e-9
    t_max: float = 400.0
    output_dt: float = 0.05

    def __post_init__(self) -> None:
        for name in ("rel_tol", "abs_tol", "max_step", "y_stop", "t_max", "output_dt"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not value > 0 or math.isnan(value):
                raise ConfigError(f"{name} must be > 0, got {value!r}")
