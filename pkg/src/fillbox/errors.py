"""Exception hierarchy shared across the package."""


class FillboxError(Exception):
    """Base class for all package errors."""


class ConfigError(FillboxError, ValueError):
    """Invalid parameters, config files or policy specifications."""


class NumericError(FillboxError, RuntimeError):
    """A numerical procedure failed to produce a trustworthy answer."""


class SimulationError(NumericError):
    """Integration produced a non-finite state or the solver failed."""


class PolicyGapError(ConfigError):
    """A control policy does not cover the requested time span."""


class EventNotFoundError(NumericError):
    """A requested crossing never happens before the simulation stops."""


class RootBracketError(NumericError):
    """A bracketed root search found no sign change."""


class NoFeasibleCandidateError(NumericError):
    """A policy search found no candidate satisfying the ICU constraint."""
