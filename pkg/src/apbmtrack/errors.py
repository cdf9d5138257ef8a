"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ApbmTrackError(Exception):
    """Base class for all package errors."""


class DimensionError(ApbmTrackError, ValueError):
    """Array shapes do not agree with the declared model dimensions."""


class InvalidValueError(ApbmTrackError, ValueError):
    """A scalar input is NaN, out of its domain, or otherwise unusable."""


class DomainError(InvalidValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularGeometryError(InvalidValueError):
    """Sensor and target positions coincide."""


class NumericalError(ApbmTrackError, ArithmeticError):
    """A linear-algebra step failed (non-finite values, failed factorization).

    Attributes:
        matrix: offending matrix, when one is available.
        index: offending cubature-point index or time step, when known.
    """

    def __init__(self, message: str, matrix=None, index: int | None = None):
        super().__init__(message)
        self.matrix = matrix
        self.index = index


class InvariantViolation(ApbmTrackError, RuntimeError):
    """An internal guarantee did not hold; indicates a bug, not bad input."""


class ConfigError(ApbmTrackError, ValueError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        if key is not None and key not in message:
            message = f"{key}: {message}"
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key


class RunError(ApbmTrackError, RuntimeError):
    """A filter run aborted; carries the failing step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step
