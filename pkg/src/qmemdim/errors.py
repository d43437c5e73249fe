"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class QMemError(Exception):
    """Base class for all errors raised by qmemdim."""


class DomainError(QMemError, ValueError):
    """An argument lies outside the domain of an operation."""


class DegenerateStateError(DomainError):
    """DEJMPS normalisation constant vanished."""


class CapacityError(QMemError):
    """The requested state space or matrix is larger than the configured budget."""

    def __init__(self, message: str, count: int):
        super().__init__(message)
        self.count = count


class ConvergenceError(QMemError):
    """Power iteration did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
