"""Exception hierarchy shared by all modules."""

from __future__ import annotations

__all__ = [
    "CornerflowError",
    "DomainError",
    "SingularEvaluationError",
    "PreconditionError",
    "AccuracyError",
    "IntegrationError",
    "RegularityError",
    "ConfigError",
]


class CornerflowError(Exception):
    """Base class for library errors."""


class DomainError(CornerflowError, ValueError):
    """Input lies outside the domain of an operation."""


class SingularEvaluationError(DomainError):
    """A non-compactified quantity was requested at theta = 0 or rho = 0."""


class PreconditionError(CornerflowError, ValueError):
    """A documented precondition of an operation does not hold."""


class AccuracyError(CornerflowError, ArithmeticError):
    """A numerical approximation cannot reach its accuracy contract."""


class IntegrationError(CornerflowError, ArithmeticError):
    """The ODE integrator failed; ``last_state`` holds the last accepted state."""

    def __init__(self, message: str, last_state=None, last_time=None):
        super().__init__(message)
        self.last_state = last_state
        self.last_time = last_time


class RegularityError(CornerflowError, ArithmeticError):
    """The theta-parametrized system lost regularity (denominator near zero)."""


class ConfigError(CornerflowError, ValueError):
    """Malformed or inconsistent run configuration."""
