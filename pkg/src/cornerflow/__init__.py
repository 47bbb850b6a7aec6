"""Geodesic flow, normal exponential map and normal forms near a corner."""

from .errors import (
    AccuracyError,
    ConfigError,
    CornerflowError,
    DomainError,
    IntegrationError,
    PreconditionError,
    RegularityError,
    SingularEvaluationError,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyError",
    "ConfigError",
    "CornerflowError",
    "DomainError",
    "IntegrationError",
    "PreconditionError",
    "RegularityError",
    "SingularEvaluationError",
]
