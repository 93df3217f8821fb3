"""Pendulum separatrices homoclinic to the saddle at q = 0.

Each side of the loop is a graph over q, so instead of shooting from the saddle we
integrate the energy relation from the antipode q = pi outwards.  The distance to the
saddle w > 0 is carried in logarithmic form, y = log w, which turns the infinite-time
approach into a smooth ODE with dy/dt -> -lambda.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import BPoly

from .errors import InputError, NumericalFailure
from .model import PendulumSpec

SAMPLE_STEP = 0.02
DECAY_FIT_TOL = 0.02


@dataclass(frozen=True)
class _Side:
    """Quintic Hermite interpolants of the saddle deviation u and momentum p on one side."""

    u: BPoly
    p: BPoly
    saddle: float
    tail_coeff: float
    orient: float  # sign of u on this side


@dataclass(frozen=True)
class HomoclinicOrbit:
    pendulum: PendulumSpec
    lam: float
    t_span: float
    branch: int
    samples: tuple  # (t, q, p) arrays
    tail_coeff_left: float
    tail_coeff_right: float
    decay_rate_left: float
    decay_rate_right: float
    max_energy_error: float
    _left: _Side = field(repr=False, default=None)
    _right: _Side = field(repr=False, default=None)

    @property
    def sign(self) -> int:
        return self.pendulum.sign

    @property
    def tail_coeff(self) -> float:
        return max(self.tail_coeff_left, self.tail_coeff_right)

    @property
    def direction(self) -> int:
        """+1 if q increases along the orbit."""
        return self.pendulum.sign * self.branch

    def eval_arrays(self, t):
        """Deviation from the saddle, momentum, velocity and acceleration at times t.

        The deviation u satisfies q = u (mod 2pi) and is computed without reference to
        the lifted angle, so it keeps full relative accuracy in the tails.
        """
        t = np.asarray(t, dtype=float)
        shape = t.shape
        t = t.reshape(-1)
        u = np.empty_like(t)
        p = np.empty_like(t)
        T = self.t_span
        for side, inner, tail in (
            (self._right, (t >= 0) & (t <= T), t > T),
            (self._left, (t < 0) & (t >= -T), t < -T),
        ):
            if np.any(inner):
                u[inner] = side.u(t[inner])
                p[inner] = side.p(t[inner])
            if np.any(tail):
                w = side.tail_coeff * np.exp(-self.lam * np.abs(t[tail]))
                u[tail] = side.orient * w
                p[tail] = self.branch * self.lam * w
        sigma = self.pendulum.sign
        qdot = sigma * p
        qddot = -self.pendulum.dV(u)
        return u.reshape(shape), p.reshape(shape), qdot.reshape(shape), qddot.reshape(shape)

    def lift(self, t, u):
        """Continuous angle q(t) from the deviation u(t)."""
        t = np.asarray(t, dtype=float)
        saddle = np.where(t >= 0, self._right.saddle, self._left.saddle)
        return saddle + u

    @property
    def l1_norms(self) -> dict:
        """Integrals of |u|, |p| and |t u| over the whole line (tails analytic)."""
        t, q, p = self.samples
        u, _, _, _ = self.eval_arrays(t)
        lam = self.lam
        T = self.t_span
        cl, cr = self.tail_coeff_left, self.tail_coeff_right
        tail = (cl + cr) * np.exp(-lam * T) / lam
        tail_t = (cl + cr) * np.exp(-lam * T) * (T / lam + 1 / lam**2)
        return {
            "u": float(trapezoid(np.abs(u), t) + tail),
            "p": float(trapezoid(np.abs(p), t) + lam * tail),
            "tu": float(trapezoid(np.abs(t * u), t) + tail_t),
        }


def _side(pendulum: PendulumSpec, branch: int, t_span: float, step: float, forward: bool, rtol: float):
    sigma = pendulum.sign
    direction = sigma * branch
    # forward side approaches the saddle the orbit is moving towards
    orient = -direction if forward else direction
    saddle = np.pi - orient * np.pi
    depth = pendulum.potential.depth

    def rhs(t, y):
        w = np.exp(y[0])
        D = max(float(depth(orient * w)), 0.0)
        rate = np.sqrt(2.0 * D) / w
        return [-rate if forward else rate]

    n = int(np.ceil(t_span / step))
    grid = np.linspace(0.0, t_span, n + 1)
    if not forward:
        grid = -grid
    sol = solve_ivp(
        rhs,
        (grid[0], grid[-1]),
        [np.log(np.pi)],
        method="DOP853",
        t_eval=grid,
        rtol=rtol,
        atol=rtol,
    )
    if not sol.success:
        raise NumericalFailure(f"separatrix integration failed: {sol.message}")
    w = np.exp(sol.y[0])
    u = orient * w
    p = branch * np.sqrt(2.0 * np.maximum(depth(u), 0.0))
    if not forward:
        grid, u, p, w = grid[::-1], u[::-1], p[::-1], w[::-1]
    dV = pendulum.dV(u)
    d2V = pendulum.d2V(u)
    u_d = np.stack([u, sigma * p, -dV], axis=1)
    p_d = np.stack([p, -sigma * dV, -d2V * p], axis=1)
    lam = pendulum.lam
    end = -1 if forward else 0
    side = _Side(
        u=BPoly.from_derivatives(grid, u_d),
        p=BPoly.from_derivatives(grid, p_d),
        saddle=saddle,
        tail_coeff=float(w[end] * np.exp(lam * t_span)),
        orient=float(orient),
    )
    # decay fit on the outer half of the window
    mask = np.abs(grid) >= 0.5 * t_span
    slope = np.polyfit(np.abs(grid[mask]), np.log(w[mask]), 1)[0]
    return side, grid, u, p, -slope


def compute_separatrix(
    pendulum: PendulumSpec,
    t_span: float | None = None,
    tol: float = 1e-10,
    branch: int | None = None,
    rtol: float = 1e-13,
) -> HomoclinicOrbit:
    """Separatrix of ``pendulum`` normalized so that q(0) = pi."""
    lam = pendulum.lam
    if t_span is None:
        t_span = max(20.0, 30.0 / lam)
    if not t_span >= 10.0 / lam * (1 - 1e-12):
        raise InputError(f"t_span = {t_span} is shorter than 10/lambda = {10 / lam}")
    if not tol > 0:
        raise InputError("tol must be positive")
    branch = pendulum.branch if branch is None else branch
    step = SAMPLE_STEP / lam
    right, tr, ur, pr, rate_r = _side(pendulum, branch, t_span, step, True, rtol)
    left, tl, ul, pl, rate_l = _side(pendulum, branch, t_span, step, False, rtol)
    t = np.concatenate([tl[:-1], tr])
    u = np.concatenate([ul[:-1], ur])
    p = np.concatenate([pl[:-1], pr])
    q = np.where(t >= 0, right.saddle, left.saddle) + u

    for rate in (rate_l, rate_r):
        if abs(rate - lam) > DECAY_FIT_TOL * lam:
            raise NumericalFailure(f"fitted decay rate {rate:.6g} differs from lambda {lam:.6g}")

    orbit = HomoclinicOrbit(
        pendulum=pendulum,
        lam=lam,
        t_span=float(t_span),
        branch=branch,
        samples=(t, q, p),
        tail_coeff_left=left.tail_coeff,
        tail_coeff_right=right.tail_coeff,
        decay_rate_left=float(rate_l),
        decay_rate_right=float(rate_r),
        max_energy_error=0.0,
        _left=left,
        _right=right,
    )
    # energy check between the samples, where the interpolant is on its own
    mid = 0.5 * (t[1:] + t[:-1])
    um, pm, _, _ = orbit.eval_arrays(mid)
    err = float(np.max(np.abs(0.5 * pm**2 - pendulum.potential.depth(um))))
    if err > tol:
        raise NumericalFailure(f"separatrix energy error {err:.3e} exceeds tolerance {tol:.1e}")
    object.__setattr__(orbit, "max_energy_error", err)
    return orbit


def orbit_value(orbit: HomoclinicOrbit, t):
    """(q, p) at time t; q on the continuous lift through q(0) = pi."""
    u, p, _, _ = orbit.eval_arrays(t)
    q = orbit.lift(t, u)
    if np.ndim(q) == 0:
        return float(q), float(p)
    return q, p


def orbit_derivative(orbit: HomoclinicOrbit, t):
    """(qdot, pdot) = (sigma p, -sigma V'(q))."""
    u, p, qdot, _ = orbit.eval_arrays(t)
    pdot = -orbit.pendulum.sign * orbit.pendulum.dV(u)
    if np.ndim(qdot) == 0:
        return float(qdot), float(pdot)
    return qdot, pdot


def energy_residual(orbit: HomoclinicOrbit) -> float:
    """max |p^2/2 + V(q) - V(0)| over the stored samples."""
    t, q, p = orbit.samples
    return float(np.max(np.abs(0.5 * p**2 - orbit.pendulum.potential.depth(q))))


def separatrices(spec, **kwargs) -> list[HomoclinicOrbit]:
    return [compute_separatrix(pd, **kwargs) for pd in spec.pendulums]


def dump_orbit_csv(orbit: HomoclinicOrbit, path) -> None:
    t, q, p = orbit.samples
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "q", "p"])
        for row in zip(t, q, p):
            writer.writerow([f"{v:.17g}" for v in row])


def read_orbit_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]
