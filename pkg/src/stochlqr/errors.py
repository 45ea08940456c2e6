"""Exception hierarchy shared by the solvers."""
from __future__ import annotations


class LqrError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LqrError, ValueError):
    """Matrix shapes do not fit together."""


class StabilityError(LqrError):
    """A gain or closed-loop matrix violates the required spectral bound."""


class DivergenceError(LqrError):
    """A simulated trajectory blew up."""

    def __init__(self, step: int, norm: float):
        super().__init__(f"trajectory diverged at step {step} (|x| = {norm:.3e})")
        self.step = step
        self.norm = norm


class ExcitationError(LqrError):
    """A data-driven linear system is rank deficient or badly conditioned."""


class DefinitenessError(LqrError):
    """A matrix that must be positive definite is not."""


class ConvergenceError(LqrError):
    """An iteration hit its cap before meeting the stopping rule."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
