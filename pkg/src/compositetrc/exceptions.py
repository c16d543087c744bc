"""Error hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented exit statuses without inspecting messages.
"""


class TRCError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    category = "error"


class ConfigError(TRCError, ValueError):
    """Invalid configuration, hyperparameters or model specification."""

    exit_code = 2
    category = "config"


class ParameterDomainError(ConfigError):
    """A parameter lies outside its admissible domain (e.g. lengthscale <= 0)."""


class DataError(TRCError, ValueError):
    """Input data is malformed or violates a documented invariant."""

    exit_code = 3
    category = "data"


class DataValidationError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class SchemaError(DataError):
    pass


class DegenerateFoldError(DataError):
    pass


class UnknownPatientError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericalError(TRCError, ArithmeticError):
    """Numerical failure: non-finite values, failed factorizations."""

    exit_code = 4
    category = "numerical"


class NumericalAccuracyError(NumericalError):
    """Adaptive quadrature did not reach the requested tolerance."""


class IllConditionedCovarianceError(NumericalError):
    pass


class OptimizationError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class TrainingError(NumericalError):
    pass


class MetricError(DataError):
    """Metric inputs are inconsistent (length mismatch, non-positive variance)."""
