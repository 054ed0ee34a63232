"""Exception hierarchy shared by every stage of the pipeline."""


class LpnmfError(Exception):
    """Base class for all package errors."""


class ConfigError(LpnmfError, ValueError):
    """Invalid configuration value or file."""


class DataError(LpnmfError, ValueError):
    """Input data violates a model invariant."""


class InvalidMeasurementError(DataError):
    """Non-positive travel time fed to the traffic index."""


class ParseError(DataError):
    """A dataset file could not be parsed or failed validation.

    Carries the offending file, the 1-based line number (``None`` when the
    problem is file-level) and the violated invariant.
    """

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        self.message = message
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


class NumericalError(LpnmfError, ArithmeticError):
    """A solver produced non-finite values."""
