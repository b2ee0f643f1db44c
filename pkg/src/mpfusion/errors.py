"""Exception hierarchy.

Configuration problems map to CLI exit code 2 and numerical failures to
exit code 3 (see :mod:`mpfusion.cli`).
"""


class MPFError(Exception):
    """Base class for all package errors."""


class ConfigError(MPFError, ValueError):
    """Invalid parameters, thresholds, or configuration files."""


class DimensionError(MPFError, ValueError):
    """Arrays, grids, or geometries have incompatible shapes."""


class NonFiniteError(DimensionError):
    """An array that must be finite contains NaN or infinity."""


class InvalidTransformError(ConfigError):
    """Transform parameters are incompatible with the requested mode."""


class InvalidWeightsError(ConfigError):
    """Weights are negative or violate the partition of unity."""


class FormatError(MPFError, ValueError):
    """Malformed MPFVOL1 / MPFSIN1 file."""


class NumericalError(MPFError, ArithmeticError):
    """Base class for failures during numerical iteration."""


class UndefinedRatioError(NumericalError):
    """A norm ratio was requested for a zero-norm input."""


class SolverError(NumericalError):
    """Conjugate gradient diverged; ``diagnostics`` holds the residual trace."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DivergenceError(NumericalError):
    """Non-finite values appeared during fixed-point iteration."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
