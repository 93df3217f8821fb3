"""Melnikov potential of a Fourier perturbation along the product of separatrices.

    L(tau, I, phi, s) = -int [H1(q0(tau + t), phi + omega(I) t, s + t) - H1(0, phi + omega(I) t, s + t)] dt

Derivatives are taken under the integral sign.  The integrand decays like
exp(-lambda |t|), so the quadrature runs over a finite window and the remainder is
bounded with the analytic tail of the separatrices.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import AccuracyError, InputError, UnsupportedModeError
from .homoclinic import HomoclinicOrbit
from .model import FourierFunction, Mode, SystemSpec
from .quadrature import integrate

WINDOW_WIDEN = 1.2
DEFAULT_TOL = 1e-11


@dataclass(frozen=True)
class MelnikovEval:
    value: float
    grad_tau: np.ndarray
    grad_I: np.ndarray
    grad_phi: np.ndarray
    d_s: float
    hess_tau: np.ndarray
    est_error: float

    def __add__(self, other: "MelnikovEval") -> "MelnikovEval":
        return MelnikovEval(
            self.value + other.value,
            self.grad_tau + other.grad_tau,
            self.grad_I + other.grad_I,
            self.grad_phi + other.grad_phi,
            self.d_s + other.d_s,
            self.hess_tau + other.hess_tau,
            self.est_error + other.est_error,
        )

    @property
    def hess_det(self) -> float:
        return float(np.linalg.det(self.hess_tau))


def zero_eval(n: int, d: int) -> MelnikovEval:
    return MelnikovEval(0.0, np.zeros(n), np.zeros(d), np.zeros(d), 0.0, np.zeros((n, n)), 0.0)


class Melnikov:
    """Evaluator bound to one system and its separatrices."""

    def __init__(self, system: SystemSpec, orbits: Sequence[HomoclinicOrbit], tol: float = DEFAULT_TOL):
        if len(orbits) != system.n:
            raise InputError(f"{len(orbits)} orbits given for {system.n} pendulums")
        for orbit, pend in zip(orbits, system.pendulums):
            if orbit.pendulum != pend:
                raise InputError("orbit does not belong to the matching pendulum")
        if not tol > 0:
            raise InputError("tol must be positive")
        self.system = system
        self.orbits = tuple(orbits)
        self.tol = tol
        self.n, self.d = system.n, system.d
        K, L, m, a, chi = system.perturbation.arrays
        keep = np.any(K != 0, axis=1) if K.size else np.zeros(0, dtype=bool)
        self.K = K[keep].reshape(-1, self.n)
        self.L = L[keep].reshape(-1, self.d)
        self.m = m[keep]
        self.a = a[keep]
        self.chi = chi[keep]
        self.lam = np.array([o.lam for o in orbits])
        self.t_span = np.array([o.t_span for o in orbits])
        self.tail_c = np.array([[o.tail_coeff_left, o.tail_coeff_right] for o in orbits])

    @property
    def trivial(self) -> bool:
        return self.a.size == 0 or not np.any(self.a != 0)

    def _window(self, tau):
        Tw = WINDOW_WIDEN * self.t_span
        lo = float(np.min(-Tw - tau))
        hi = float(np.max(Tw - tau))
        return lo, hi

    def _tail_bound(self, tau, lo, hi, LW):
        """Analytic bound on every integrand component beyond [lo, hi]."""
        lam = self.lam
        # upper side: t > hi, every pendulum time t + tau_i beyond its window
        e_hi = self.tail_c[:, 1] * np.exp(-lam * (hi + tau))
        e_lo = self.tail_c[:, 0] * np.exp(lam * (lo + tau))
        E = (e_hi + e_lo) / lam
        Et = e_hi * (abs(hi) / lam + 1 / lam**2) + e_lo * (abs(lo) / lam + 1 / lam**2)
        lmax = float(np.max(lam))
        k1 = np.sum(np.abs(self.K), axis=1)
        kappa = (1 + k1) ** 2 * (1 + lmax) ** 2 * (1 + np.sum(np.abs(self.L), axis=1) + np.abs(self.m))
        per_mode = np.abs(self.a) * kappa * (np.sum(E) + np.sum(np.abs(LW), axis=1) * np.sum(Et))
        return float(np.sum(per_mode))

    def evaluate(self, tau, I, phi, s, tol: float | None = None, want_hess: bool = True) -> MelnikovEval:
        tol = self.tol if tol is None else tol
        n, d = self.n, self.d
        tau = np.asarray(tau, dtype=float).reshape(-1)
        I = np.asarray(I, dtype=float).reshape(-1)
        phi = np.asarray(phi, dtype=float).reshape(-1)
        if tau.shape != (n,) or I.shape != (d,) or phi.shape != (d,):
            raise InputError("tau, I, phi dimensions do not match the system")
        s = float(s)
        if self.trivial:
            return zero_eval(n, d)
        omega = self.system.omega(I)
        hess_h = self.system.rotor.hessian(I)
        theta0 = self.L @ phi + self.m * s + self.chi
        nu = self.L @ omega + self.m
        LW = self.L @ hess_h
        lo, hi = self._window(tau)
        tail = self._tail_bound(tau, lo, hi, LW)
        lam_min = float(np.min(self.lam))
        for _ in range(8):
            if tail <= 0.1 * tol:
                break
            # beyond t_span the orbit is its exact exponential tail, so widening is cheap
            grow = np.log(tail / (0.1 * tol)) / lam_min + 1.0
            lo, hi = lo - grow, hi + grow
            tail = self._tail_bound(tau, lo, hi, LW)
        if tail > 0.5 * tol:
            raise AccuracyError(f"tail bound {tail:.2e} exceeds half the tolerance {tol:.1e}")

        orbits = self.orbits

        def integrand(t):
            N = t.size
            u = np.empty((N, n))
            qd = np.empty((N, n))
            qdd = np.empty((N, n))
            for i, orbit in enumerate(orbits):
                ui, _, qdi, qddi = orbit.eval_arrays(t + tau[i])
                u[:, i], qd[:, i], qdd[:, i] = ui, qdi, qddi
            return kernels.melnikov_integrand(t, u, qd, qdd, self.K, theta0, nu, self.a, self.L, LW, self.m, want_hess)

        scale = max(float(np.max(self.lam)), float(np.max(np.abs(nu))) if nu.size else 0.0, 1e-3)
        panels = int(np.ceil((hi - lo) * scale / 1.5))
        try:
            res = integrate(integrand, lo, hi, tol - tail, initial_panels=max(panels, 8))
        except AccuracyError as exc:
            raise AccuracyError(str(exc), best=self._unpack(-exc.best.value, exc.best.error + tail, want_hess)) from exc
        return self._unpack(-res.value, res.error + tail, want_hess)

    def _unpack(self, v, err, want_hess) -> MelnikovEval:
        n, d = self.n, self.d
        hess = v[2 + n + 2 * d :].reshape(n, n).copy() if want_hess else np.full((n, n), np.nan)
        return MelnikovEval(
            value=float(v[0]),
            grad_tau=v[1 : 1 + n].copy(),
            grad_phi=v[1 + n : 1 + n + d].copy(),
            grad_I=v[1 + n + d : 1 + n + 2 * d].copy(),
            d_s=float(v[1 + n + 2 * d]),
            hess_tau=hess,
            est_error=float(err),
        )

    __call__ = evaluate

    def bound(self) -> float:
        """sup |L| over (tau, phi, s): sum_j |a_j| sum_i |k_ji| ||u_i||_1."""
        norms = np.array([o.l1_norms["u"] for o in self.orbits])
        return float(np.sum(np.abs(self.a) * (np.abs(self.K) @ norms)))


def melnikov(system, orbits, tau, I, phi, s, tol: float = DEFAULT_TOL, want_hess: bool = True) -> MelnikovEval:
    return Melnikov(system, orbits, tol).evaluate(tau, I, phi, s, tol, want_hess)


def check_shift_identity(system, orbits, tau, I, phi, s, sigma: float, tol: float = DEFAULT_TOL) -> float:
    """|L(tau + sigma, I, phi, s) - L(tau, I, phi - omega sigma, s - sigma)|."""
    mk = orbits if isinstance(orbits, Melnikov) else Melnikov(system, orbits, tol)
    tau = np.asarray(tau, dtype=float)
    phi = np.asarray(phi, dtype=float)
    omega = system.omega(I)
    left = mk.evaluate(tau + sigma, I, phi, s, tol, want_hess=False).value
    right = mk.evaluate(tau, I, phi - omega * sigma, s - sigma, tol, want_hess=False).value
    return abs(left - right)


def uniform_bound(system, orbits) -> float:
    return Melnikov(system, orbits).bound()


# -- one-dimensional transforms and the closed form -----------------------------------


def _transforms(orbit: HomoclinicOrbit, funcs: Sequence[FourierFunction], freq: float, tol: float, derivative: bool):
    """Rows (A1, A2[, dA1, dA2]) of -int (f(q0) - f(0)) {cos, sin}(freq t) dt per function."""
    T = WINDOW_WIDEN * orbit.t_span
    lam = orbit.lam
    amp = sum(f.amplitude_sum * max(1, max((k for k, _, _ in f.terms), default=1)) for f in funcs)
    tail = amp * (orbit.tail_coeff_left + orbit.tail_coeff_right) * np.exp(-lam * T) * (1 / lam + T / lam + 1 / lam**2)
    ncol = 4 if derivative else 2

    def integrand(t):
        u, _, _, _ = orbit.eval_arrays(t)
        c, s = np.cos(freq * t), np.sin(freq * t)
        out = np.empty((t.size, ncol * len(funcs)))
        for j, f in enumerate(funcs):
            g = -f.depth(u)  # f(q0) - f(0)
            out[:, ncol * j] = -g * c
            out[:, ncol * j + 1] = -g * s
            if derivative:
                out[:, ncol * j + 2] = g * t * s
                out[:, ncol * j + 3] = -g * t * c
        return out

    panels = int(np.ceil(2 * T * max(lam, abs(freq), 1e-3) / 1.5))
    res = integrate(integrand, -T, T, max(tol - tail, 0.5 * tol), initial_panels=max(panels, 8))
    return res.value.reshape(len(funcs), ncol), res.error + tail


def fourier_transform_coeffs(orbit: HomoclinicOrbit, f: FourierFunction, freq: float, tol: float = 1e-12):
    """(A1, A2) = (-int (f(q0(t)) - f(0)) cos(freq t) dt, same with sin)."""
    if not np.isfinite(freq):
        raise InputError("frequency must be finite")
    rows, _ = _transforms(orbit, [f], float(freq), tol, derivative=False)
    return float(rows[0, 0]), float(rows[0, 1])


def _single_pendulum(mode: Mode) -> tuple[int, int]:
    nz = [i for i, k in enumerate(mode.k) if k != 0]
    if len(nz) > 1:
        raise UnsupportedModeError(f"mode couples pendulums {nz}; closed form needs a single one")
    if not nz:
        return -1, 0
    return nz[0], mode.k[nz[0]]


def melnikov_closed_form(system: SystemSpec, orbits, mode: Mode, tau, I, phi, s, tol: float = 1e-12) -> MelnikovEval:
    """Potential of one mode through the transforms of cos(kq) - 1 and sin(kq) at frequency l.omega + m."""
    n, d = system.n, system.d
    tau = np.asarray(tau, dtype=float).reshape(-1)
    I = np.asarray(I, dtype=float).reshape(-1)
    phi = np.asarray(phi, dtype=float).reshape(-1)
    i, kappa = _single_pendulum(mode)
    if i < 0 or mode.amplitude == 0.0:
        return zero_eval(n, d)
    l = np.array(mode.l, dtype=float)
    nu = float(l @ system.omega(I) + mode.m)
    psi = float(l @ phi + mode.m * s + mode.phase - nu * tau[i])
    fc = FourierFunction(((kappa, 1.0, 0.0),))
    fs = FourierFunction(((kappa, 0.0, 1.0),))
    rows, err = _transforms(orbits[i], [fc, fs], nu, tol, derivative=True)
    A1c, A2c, dA1c, dA2c = rows[0]
    A1s, A2s, dA1s, dA2s = rows[1]
    a = mode.amplitude
    P, Q = A1c - A2s, A2c + A1s
    value = a * (P * np.cos(psi) - Q * np.sin(psi))
    d_psi = a * (-P * np.sin(psi) - Q * np.cos(psi))
    d_nu_coeffs = a * ((dA1c - dA2s) * np.cos(psi) - (dA2c + dA1s) * np.sin(psi))
    d_nu = d_nu_coeffs - tau[i] * d_psi
    grad_tau = np.zeros(n)
    grad_tau[i] = -nu * d_psi
    hess = np.zeros((n, n))
    hess[i, i] = -(nu**2) * value
    return MelnikovEval(
        value=float(value),
        grad_tau=grad_tau,
        grad_I=d_nu * (system.rotor.hessian(I) @ l),
        grad_phi=d_psi * l,
        d_s=float(mode.m * d_psi),
        hess_tau=hess,
        est_error=float(err * abs(a) * 2),
    )


def melnikov_closed_form_sum(system: SystemSpec, orbits, tau, I, phi, s, tol: float = 1e-12) -> MelnikovEval:
    """Closed form summed over all modes; every mode must touch at most one pendulum."""
    total = zero_eval(system.n, system.d)
    for mode in system.perturbation.modes:
        total = total + melnikov_closed_form(system, orbits, mode, tau, I, phi, s, tol)
    return total


# -- grid scans ----------------------------------------------------------------------


def scan_grid(system, orbits, points, tol: float = 1e-10, workers: int = 1) -> list[dict]:
    """Evaluate L on a list of (tau, I, phi, s) points; order of the output matches the input."""
    mk = Melnikov(system, orbits, tol)

    def one(pt):
        tau, I, phi, s = pt
        ev = mk.evaluate(tau, I, phi, s)
        return {
            "tau": np.atleast_1d(np.asarray(tau, dtype=float)),
            "I": np.atleast_1d(np.asarray(I, dtype=float)),
            "phi": np.atleast_1d(np.asarray(phi, dtype=float)),
            "s": float(s),
            "L": ev.value,
            "grad_tau_norm": float(np.sum(np.abs(ev.grad_tau))),
            "det_hess": ev.hess_det,
            "est_error": ev.est_error,
        }

    points = list(points)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, points))
    return [one(p) for p in points]


def write_scan_csv(rows: list[dict], path, n: int, d: int) -> None:
    header = (
        [f"tau{i + 1}" for i in range(n)]
        + [f"I{i + 1}" for i in range(d)]
        + [f"phi{i + 1}" for i in range(d)]
        + ["s", "L", "grad_tau_norm", "det_hess", "est_error"]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            vals = list(r["tau"]) + list(r["I"]) + list(r["phi"]) + [r["s"], r["L"], r["grad_tau_norm"], r["det_hess"], r["est_error"]]
            w.writerow([f"{float(v):.17g}" for v in vals])
