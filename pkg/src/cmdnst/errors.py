"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CmdnstError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CmdnstError, ValueError):
    """An argument violates an operation's input contract."""


class ContractViolationError(CmdnstError, ValueError):
    """A value breaks a stated invariant, e.g. unbounded support where [0,1] is required."""


class ConfigError(CmdnstError, ValueError):
    """A configuration object is inconsistent or names unknown entities."""


class WeightLoadError(CmdnstError, RuntimeError):
    """A weight archive is missing, corrupt, or does not match the architecture."""


class NumericError(CmdnstError, ArithmeticError):
    """A computation produced non-finite intermediate values."""


class OptimizationDivergedError(CmdnstError, RuntimeError):
    """The optimization loss became non-finite; carries the trace recorded so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
