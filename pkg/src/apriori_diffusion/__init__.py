"""Numerical checks of drift mechanisms in a priori unstable Hamiltonian systems."""

from .errors import (
    AccuracyError,
    DiffusionError,
    DomainError,
    DomainExit,
    ExcursionFailure,
    InputError,
    MorseViolation,
    NumericalFailure,
    RepairFailure,
    SearchFailure,
    UnsupportedModeError,
)
from .kernels import BACKEND

__version__ = "0.1.0"
