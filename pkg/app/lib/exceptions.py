"""Exception hierarchy for the estimator and its harness."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from pathlib import Path


class ApplicationError(Exception):
    """Base exception for the application."""

    def __init__(self, detail: str = "Application error") -> None:
        super().__init__(detail)
        self.detail = detail


class InputError(ApplicationError, ValueError):
    """Raised for invalid arguments or inconsistent dimensions."""

    def __init__(self, detail: str = "Invalid input") -> None:
        super().__init__(detail=detail)


class SizeError(InputError):
    """Raised when a problem exceeds an enumeration cost guard."""

    def __init__(self, detail: str = "Problem too large for exhaustive evaluation") -> None:
        super().__init__(detail=detail)


class StateError(ApplicationError):
    """Raised when a variational state violates its invariants."""

    def __init__(self, detail: str = "Invalid variational state") -> None:
        super().__init__(detail=detail)


class NumericalError(ApplicationError):
    """Raised when a linear solve fails even after regularization."""

    def __init__(self, detail: str = "Numerical failure") -> None:
        super().__init__(detail=detail)


class MessageError(ApplicationError):
    """Raised when Bernoulli messages are degenerate in conflicting directions."""

    def __init__(self, detail: str = "Conflicting degenerate messages") -> None:
        super().__init__(detail=detail)


class ConfigurationError(ApplicationError):
    """Raised for invalid solver or experiment configuration."""

    def __init__(self, detail: str = "Invalid configuration") -> None:
        super().__init__(detail=detail)


class ExperimentIOError(ApplicationError):
    """Raised when experiment inputs or outputs cannot be read or written."""

    def __init__(self, path: Path | str, detail: str = "I/O failure") -> None:
        super().__init__(detail=f"{detail}: {path}")
        self.path = path


class SolveAborted(ApplicationError):
    """Raised when a module error interrupts a solve; carries the iterations completed so far."""

    def __init__(self, detail: str, partial_trace: list[Any]) -> None:
        super().__init__(detail=detail)
        self.partial_trace = partial_trace
