"""Rotor-pendulum Hamiltonians with a finite Fourier perturbation.

The family is

    H_eps(p, q, I, phi, t) = h(I) + sum_i sign_i * (p_i**2 / 2 + V_i(q_i)) + eps * H1(q, phi, t)

with ``h`` a polynomial of degree <= 4, each ``V_i`` a trigonometric polynomial with a
non-degenerate maximum at ``q = 0``, and ``H1`` a finite sum of cosine modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, MorseViolation

MORSE_TOL = 1e-8
UNIQUE_MAX_TOL = 1e-10
UNIQUE_MAX_EXCLUSION = 0.1
UNIQUE_MAX_GRID = 4096
SLOPE_TOL = 1e-10


def _sin_minus_x(x: np.ndarray) -> np.ndarray:
    """sin(x) - x without cancellation for small |x|."""
    x = np.asarray(x, dtype=float)
    out = np.sin(x) - x
    small = np.abs(x) < 0.1
    if np.any(small):
        xs = x[small]
        x2 = xs * xs
        out[small] = xs * x2 * (-1.0 / 6 + x2 * (1.0 / 120 + x2 * (-1.0 / 5040 + x2 / 362880)))
    return out


@dataclass(frozen=True)
class FourierFunction:
    """f(q) = sum_k c_k cos(k q) + s_k sin(k q) on the circle.

    ``terms`` holds ``(k, c_k, s_k)`` triples with integer ``k >= 0``.
    """

    terms: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        clean = []
        for term in self.terms:
            if len(term) != 3:
                raise InputError(f"Fourier term must be (k, cos, sin), got {term!r}")
            k, c, s = term
            if int(k) != k or k < 0:
                raise InputError(f"harmonic index must be a non-negative integer, got {k!r}")
            if not (np.isfinite(c) and np.isfinite(s)):
                raise InputError("Fourier amplitudes must be finite")
            clean.append((int(k), float(c), float(s)))
        object.__setattr__(self, "terms", tuple(clean))

    @cached_property
    def _arrays(self):
        k = np.array([t[0] for t in self.terms], dtype=float)
        c = np.array([t[1] for t in self.terms], dtype=float)
        s = np.array([t[2] for t in self.terms], dtype=float)
        return k, c, s

    def __call__(self, q):
        k, c, s = self._arrays
        kq = np.multiply.outer(np.asarray(q, dtype=float), k)
        return np.cos(kq) @ c + np.sin(kq) @ s

    def derivative(self, q, order: int = 1):
        k, c, s = self._arrays
        kq = np.multiply.outer(np.asarray(q, dtype=float), k)
        # d/dq cycles (cos, sin) -> (-k sin, k cos)
        ck = c * k**order
        sk = s * k**order
        phase = order % 4
        if phase == 0:
            return np.cos(kq) @ ck + np.sin(kq) @ sk
        if phase == 1:
            return -np.sin(kq) @ ck + np.cos(kq) @ sk
        if phase == 2:
            return -np.cos(kq) @ ck - np.sin(kq) @ sk
        return np.sin(kq) @ ck - np.cos(kq) @ sk

    def depth(self, u):
        """f(0) - f(u), evaluated without cancellation for small |u|."""
        k, c, s = self._arrays
        u = np.asarray(u, dtype=float)
        ku = np.multiply.outer(u, k)
        slope = float(np.dot(k, s))
        return (2.0 * np.sin(0.5 * ku) ** 2) @ c - _sin_minus_x(ku) @ s - slope * u

    @property
    def amplitude_sum(self) -> float:
        return float(sum(abs(c) + abs(s) for k, c, s in self.terms if k != 0))


@dataclass(frozen=True)
class PendulumSpec:
    """One pendulum ``sign * (p**2/2 + V(q))`` with Fourier potential ``V``.

    ``branch`` selects the homoclinic loop: +1 for the loop with p > 0.
    """

    fourier_coeffs: tuple[tuple[int, float, float], ...]
    sign: int = 1
    branch: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise InputError(f"pendulum sign must be +1 or -1, got {self.sign!r}")
        if self.branch not in (1, -1):
            raise InputError(f"branch must be +1 or -1, got {self.branch!r}")
        potential = FourierFunction(tuple(tuple(t) for t in self.fourier_coeffs))
        object.__setattr__(self, "fourier_coeffs", potential.terms)
        object.__setattr__(self, "_potential", potential)
        self._check_morse()

    @property
    def potential(self) -> FourierFunction:
        return self._potential

    def V(self, q):
        return self._potential(q)

    def dV(self, q):
        return self._potential.derivative(q, 1)

    def d2V(self, q):
        return self._potential.derivative(q, 2)

    def _check_morse(self):
        slope = float(self.dV(0.0))
        curv = float(self.d2V(0.0))
        scale = max(1.0, sum(k * (abs(c) + abs(s)) for k, c, s in self.fourier_coeffs))
        if abs(slope) > SLOPE_TOL * scale:
            raise MorseViolation(f"V'(0) = {slope:.3e} is not zero")
        if not curv < -MORSE_TOL:
            raise MorseViolation(f"V''(0) = {curv:.3e} is not negative: q = 0 is not a Morse maximum")
        grid = np.linspace(0.0, 2 * np.pi, UNIQUE_MAX_GRID, endpoint=False)
        away = np.minimum(grid, 2 * np.pi - grid) > UNIQUE_MAX_EXCLUSION
        depth = self._potential.depth(grid[away])
        if np.any(depth < UNIQUE_MAX_TOL):
            worst = grid[away][np.argmin(depth)]
            raise MorseViolation(f"q = 0 is not the unique maximum of V (V({worst:.4f}) >= V(0))")

    @property
    def lam(self) -> float:
        return float(np.sqrt(-self.d2V(0.0)))


@dataclass(frozen=True)
class RotorSpec:
    """Polynomial h(I) on R^d given as ``((powers, coeff), ...)``; degree <= 4."""

    coefficients: tuple[tuple[tuple[int, ...], float], ...]
    dim: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("rotor dimension must be >= 1")
        clean = []
        for entry in self.coefficients:
            powers, coeff = entry
            powers = tuple(int(e) for e in powers)
            if len(powers) != self.dim:
                raise InputError(f"rotor term {powers} does not match dimension {self.dim}")
            if any(e < 0 for e in powers) or sum(powers) > 4:
                raise InputError(f"rotor term {powers} must have non-negative powers of total degree <= 4")
            clean.append((powers, float(coeff)))
        object.__setattr__(self, "coefficients", tuple(clean))

    @cached_property
    def _arrays(self):
        if not self.coefficients:
            return np.zeros((0, self.dim)), np.zeros(0)
        P = np.array([c[0] for c in self.coefficients], dtype=float)
        a = np.array([c[1] for c in self.coefficients], dtype=float)
        return P, a

    def _check(self, I) -> np.ndarray:
        I = np.asarray(I, dtype=float).reshape(-1)
        if I.shape != (self.dim,):
            raise InputError(f"action has dimension {I.shape[0]}, expected {self.dim}")
        return I

    def value(self, I) -> float:
        I = self._check(I)
        P, a = self._arrays
        return float(np.sum(a * np.prod(I**P, axis=1))) if a.size else 0.0

    def frequency(self, I) -> np.ndarray:
        """omega(I) = Dh(I)."""
        I = self._check(I)
        P, a = self._arrays
        out = np.zeros(self.dim)
        for j in range(self.dim):
            Pj = P.copy()
            coeff = a * Pj[:, j]
            Pj[:, j] = np.maximum(Pj[:, j] - 1, 0)
            out[j] = np.sum(coeff * np.prod(I**Pj, axis=1))
        return out

    def hessian(self, I) -> np.ndarray:
        I = self._check(I)
        P, a = self._arrays
        out = np.zeros((self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                Pij = P.copy()
                coeff = a * Pij[:, i]
                Pij[:, i] = np.maximum(Pij[:, i] - 1, 0)
                coeff = coeff * Pij[:, j]
                Pij[:, j] = np.maximum(Pij[:, j] - 1, 0)
                out[i, j] = np.sum(coeff * np.prod(I**Pij, axis=1))
        return out


@dataclass(frozen=True)
class Mode:
    """One term ``amplitude * cos(k.q + l.phi + m t + phase)``."""

    k: tuple[int, ...]
    l: tuple[int, ...]
    m: int
    amplitude: float
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        object.__setattr__(self, "l", tuple(int(v) for v in self.l))
        object.__setattr__(self, "m", int(self.m))
        if not np.isfinite(self.amplitude) or not np.isfinite(self.phase):
            raise InputError("mode amplitude and phase must be finite")
        object.__setattr__(self, "amplitude", float(self.amplitude))
        phase = float(self.phase) % (2 * np.pi)
        # a tiny negative phase rounds up to exactly 2 pi
        object.__setattr__(self, "phase", 0.0 if phase >= 2 * np.pi else phase)


@dataclass(frozen=True)
class PerturbationSpec:
    modes: tuple[Mode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))

    def check_dims(self, n: int, d: int):
        for mode in self.modes:
            if len(mode.k) != n or len(mode.l) != d:
                raise InputError(f"mode {mode} does not match dimensions n={n}, d={d}")

    @cached_property
    def arrays(self):
        """(K, L, m, amplitude, phase) as float arrays, one row per mode."""
        M = len(self.modes)
        if M == 0:
            return (np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0), np.zeros(0), np.zeros(0))
        K = np.array([md.k for md in self.modes], dtype=float)
        L = np.array([md.l for md in self.modes], dtype=float)
        m = np.array([md.m for md in self.modes], dtype=float)
        a = np.array([md.amplitude for md in self.modes], dtype=float)
        chi = np.array([md.phase for md in self.modes], dtype=float)
        return K, L, m, a, chi

    @property
    def amplitude_sum(self) -> float:
        return float(sum(abs(md.amplitude) for md in self.modes))

    def __add__(self, other: "PerturbationSpec") -> "PerturbationSpec":
        return PerturbationSpec(self.modes + other.modes)


@dataclass(frozen=True)
class SystemSpec:
    rotor: RotorSpec
    pendulums: tuple[PendulumSpec, ...]
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pendulums", tuple(self.pendulums))
        if len(self.pendulums) < 1:
            raise InputError("at least one pendulum is required")
        self.perturbation.check_dims(self.n, self.d)
        if not np.isfinite(self.epsilon):
            raise InputError("epsilon must be finite")

    @property
    def n(self) -> int:
        return len(self.pendulums)

    @property
    def d(self) -> int:
        return self.rotor.dim

    def omega(self, I) -> np.ndarray:
        return self.rotor.frequency(I)

    def with_perturbation(self, extra: PerturbationSpec) -> "SystemSpec":
        return SystemSpec(self.rotor, self.pendulums, self.perturbation + extra, self.epsilon)

    def with_epsilon(self, epsilon: float) -> "SystemSpec":
        return SystemSpec(self.rotor, self.pendulums, self.perturbation, epsilon)


def _vec(x, size: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (size,):
        raise InputError(f"{name} has length {x.shape[0]}, expected {size}")
    return x


def eval_h0(spec: SystemSpec, p, q, I) -> float:
    p = _vec(p, spec.n, "p")
    q = _vec(q, spec.n, "q")
    total = spec.rotor.value(I)
    for pend, pi, qi in zip(spec.pendulums, p, q):
        total += pend.sign * (0.5 * pi * pi + float(pend.V(qi)))
    return float(total)


def pendulum_energies(spec: SystemSpec, p, q) -> np.ndarray:
    """Unsigned energies p_i**2/2 + V_i(q_i) - V_i(0); zero on the separatrix."""
    p = _vec(p, spec.n, "p")
    q = _vec(q, spec.n, "q")
    return np.array(
        [0.5 * pi * pi - float(pend.potential.depth(qi)) for pend, pi, qi in zip(spec.pendulums, p, q)]
    )


def _phases(spec: SystemSpec, q, phi, t) -> np.ndarray:
    K, L, m, a, chi = spec.perturbation.arrays
    return K @ q + L @ phi + m * t + chi


def eval_h1(spec: SystemSpec, q, phi, t) -> float:
    q = _vec(q, spec.n, "q")
    phi = _vec(phi, spec.d, "phi")
    if not spec.perturbation.modes:
        return 0.0
    a = spec.perturbation.arrays[3]
    return float(a @ np.cos(_phases(spec, q, phi, float(t))))


def grad_h1(spec: SystemSpec, q, phi, t):
    """Partials of H1: (dH1/dq, dH1/dphi, dH1/dt)."""
    q = _vec(q, spec.n, "q")
    phi = _vec(phi, spec.d, "phi")
    if not spec.perturbation.modes:
        return np.zeros(spec.n), np.zeros(spec.d), 0.0
    K, L, m, a, chi = spec.perturbation.arrays
    w = -a * np.sin(_phases(spec, q, phi, float(t)))
    return w @ K, w @ L, float(w @ m)


def grad_h0(spec: SystemSpec, p, q, I):
    """Partials of H0: (dH0/dp, dH0/dq, dH0/dI)."""
    p = _vec(p, spec.n, "p")
    q = _vec(q, spec.n, "q")
    signs = np.array([pd.sign for pd in spec.pendulums], dtype=float)
    dV = np.array([float(pd.dV(qi)) for pd, qi in zip(spec.pendulums, q)])
    return signs * p, signs * dV, spec.omega(I)


def characteristic_exponents(spec: SystemSpec) -> np.ndarray:
    out = []
    for pend in spec.pendulums:
        curv = float(pend.d2V(0.0))
        if not curv < -MORSE_TOL:
            raise MorseViolation(f"V''(0) = {curv:.3e} >= 0")
        out.append(np.sqrt(-curv))
    return np.array(out)


# -- constructors for common perturbations ---------------------------------------------


def product_modes(
    f: FourierFunction,
    pendulum: int,
    n: int,
    l: Sequence[int],
    m: int,
    phase: float = 0.0,
    amplitude: float = 1.0,
) -> PerturbationSpec:
    """Expand ``amplitude * f(q_pendulum) * cos(l.phi + m t + phase)`` into modes."""
    l = tuple(int(v) for v in l)
    neg_l = tuple(-v for v in l)
    modes = []
    for k, c, s in f.terms:
        kvec = tuple(k if j == pendulum else 0 for j in range(n))
        if k == 0:
            if c != 0.0:
                modes.append(Mode(kvec, l, m, amplitude * c, phase))
            continue
        # cos(kq)cos(X) = (cos(kq+X) + cos(kq-X))/2, sin(kq) = cos(kq - pi/2)
        if c != 0.0:
            modes.append(Mode(kvec, l, m, 0.5 * amplitude * c, phase))
            modes.append(Mode(kvec, neg_l, -m, 0.5 * amplitude * c, -phase))
        if s != 0.0:
            modes.append(Mode(kvec, l, m, 0.5 * amplitude * s, phase - np.pi / 2))
            modes.append(Mode(kvec, neg_l, -m, 0.5 * amplitude * s, -phase - np.pi / 2))
    return PerturbationSpec(tuple(modes))


def standard_pendulum(strength: float = 1.0, sign: int = 1) -> PendulumSpec:
    """V(q) = strength * (cos q - 1)."""
    return PendulumSpec(((0, -strength, 0.0), (1, strength, 0.0)), sign=sign)


def quadratic_rotor(d: int = 1) -> RotorSpec:
    """h(I) = |I|^2 / 2."""
    terms = []
    for j in range(d):
        powers = tuple(2 if i == j else 0 for i in range(d))
        terms.append((powers, 0.5))
    return RotorSpec(tuple(terms), dim=d)


def merge(perturbations: Iterable[PerturbationSpec]) -> PerturbationSpec:
    modes: tuple[Mode, ...] = ()
    for p in perturbations:
        modes += p.modes
    return PerturbationSpec(modes)
