"""Optimal epidemic suppression under an ICU capacity constraint."""

from .errors import (
    ConfigError,
    EventNotFoundError,
    FillboxError,
    NoFeasibleCandidateError,
    NumericError,
    PolicyGapError,
    RootBracketError,
    SimulationError,
)
from .params import EpidemicState, ModelParams, SimConfig

__all__ = [
    "ConfigError",
    "EpidemicState",
    "EventNotFoundError",
    "FillboxError",
    "ModelParams",
    "NoFeasibleCandidateError",
    "NumericError",
    "PolicyGapError",
    "RootBracketError",
    "SimConfig",
    "SimulationError",
]

__version__ = "0.1.0"
