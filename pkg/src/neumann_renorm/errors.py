#!/usr/bin/env python3
"""
Exception hierarchy for the Neumann solver.

Every error maps to exactly one process exit code (see doc/report_schema.md).
"""

from typing import Any, Optional, Sequence


class NeumannError(Exception):
    """Base class for all solver, configuration and reporting errors."""

    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        """Machine-readable error block."""
        return {
            'type': self.__class__.__name__,
            'code': self.exit_code,
            'message': self.message,
            'details': {key: _plain(value) for key, value in sorted(self.details.items())},
        }


class ConfigError(NeumannError):
    """Schema violation in a run configuration."""

    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None, **details: Any):
        super().__init__(message, key=key, **details)
        self.key = key


class InvalidParameterError(NeumannError, ValueError):
    """A numeric parameter is outside its admissible range."""

    exit_code = 3


class InvalidDomainError(InvalidParameterError):
    """Mesh construction was asked for an empty or malformed domain."""


class InvalidFieldError(InvalidParameterError):
    """Nodal values do not fit their mesh or are not finite."""


class ValidationError(NeumannError):
    """A structural assumption on the operator does not hold."""

    exit_code = 4


class CompatibilityError(NeumannError):
    """The datum violates the Neumann compatibility condition."""

    exit_code = 5


class NonConvergenceError(NeumannError):
    """Damped Newton stagnated before reaching the residual tolerance."""

    exit_code = 6

    def __init__(self, message: str, residual_history: Sequence[float] = (), **details: Any):
        super().__init__(message, residual_history=list(residual_history), **details)
        self.residual_history = list(residual_history)


class FixedPointNonConvergenceError(NonConvergenceError):
    """Picard iteration for the map Gamma ran out of iterations."""

    def __init__(self, message: str, distance_history: Sequence[float] = (), **details: Any):
        super().__init__(message, distance_history=list(distance_history), **details)
        self.distance_history = list(distance_history)


class NumericError(NeumannError):
    """A non-finite value appeared during quadrature, assembly or reporting."""

    exit_code = 7

    def __init__(self, message: str, element: Optional[int] = None, **details: Any):
        super().__init__(message, element=element, **details)
        self.element = element


class ReportIOError(NeumannError):
    """Report files could not be written."""

    exit_code = 8


class StageError(NeumannError):
    """A continuation stage failed; wraps the stage error with its epsilon."""

    def __init__(self, epsilon: float, cause: NeumannError):
        super().__init__(
            f"stage eps={epsilon:g} failed: {cause.message}",
            epsilon=epsilon,
            cause=cause.to_dict(),
        )
        self.epsilon = epsilon
        self.cause = cause

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return self.cause.exit_code


def _plain(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if hasattr(value, 'item'):
        return value.item()
    return value
