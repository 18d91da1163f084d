"""Exception hierarchy shared by every module."""


class BDCalcError(Exception):
    """Base class; carries an optional structured payload for reports."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"type": type(self).__name__, "message": str(self)}
        out.update({k: _plain(v) for k, v in self.details.items()})
        return out


def _plain(value):
    try:
        import numpy as np

        if isinstance(value, np.generic):
            return value.item()
        if isinstance(value, np.ndarray):
            return value.tolist()
    except ImportError:  # pragma: no cover
        pass
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


class DimensionError(BDCalcError, ValueError):
    """Grids or shapes do not match."""


class ConfigurationError(BDCalcError, ValueError):
    """An object was requested with inconsistent parameters."""


class RangeError(BDCalcError, ValueError):
    """A scale parameter falls outside what the grid can represent."""


class BudgetError(BDCalcError, RuntimeError):
    """A dense computation would exceed the configured size budget."""


class ValidationError(BDCalcError, RuntimeError):
    """An operation requires a validated system or a precondition failed."""


class SolverError(BDCalcError, RuntimeError):
    """An iterative or matrix-function solver did not converge."""
