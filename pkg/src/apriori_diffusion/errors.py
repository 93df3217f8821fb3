"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class DiffusionError(Exception):
    """Base class for every error raised by the package."""


class InputError(DiffusionError, ValueError):
    """Bad user input: dimension mismatch, invalid parameter, malformed file."""


class MorseViolation(InputError):
    """A pendulum potential does not have a unique non-degenerate maximum at q = 0."""


class UnsupportedModeError(InputError):
    """A perturbation mode couples more than one pendulum angle."""


class DomainError(InputError):
    """A point lies outside the domain covered by a critical branch."""


class NumericalFailure(DiffusionError, RuntimeError):
    """A numerical procedure did not reach its target."""


class AccuracyError(NumericalFailure):
    """Quadrature tolerance not reached; carries the best available estimate."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class SearchFailure(NumericalFailure):
    """No point with small enough gradient was found inside the search box."""

    def __init__(self, message: str, best_norm: float):
        super().__init__(message)
        self.best_norm = best_norm


class RepairFailure(NumericalFailure):
    """A repair construction could not be completed."""


class ExcursionFailure(NumericalFailure):
    """A trajectory did not return to the neighbourhood of the invariant manifold."""


class DomainExit(DiffusionError):
    """Signal raised when an orbit leaves its domain; ``partial`` holds data so far."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
