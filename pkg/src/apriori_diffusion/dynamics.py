"""Full Hamilton equations of H_eps and the per-excursion action jump.

State vector: (p, q, I, phi, A) with A conjugate to time, so that A + H_eps is
conserved:

    pdot = -sigma V'(q) - eps dH1/dq     qdot = sigma p
    Idot = -eps dH1/dphi                 phidot = omega(I)
    Adot = -eps dH1/dt
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import minimize_scalar

from . import kernels
from .errors import ExcursionFailure, InputError
from .homoclinic import HomoclinicOrbit, compute_separatrix
from .model import SystemSpec, eval_h0, eval_h1, pendulum_energies

TWO_PI = 2 * np.pi
SUMMARY_SCHEMA = "apriori-diffusion/drift-summary/1"
DEPART_RADIUS = 0.5
RETURN_RADIUS = 0.05
TIME_CAP_FACTOR = 50.0


class _Rhs:
    """Vector field of the extended system; optionally tracks the inner action drift."""

    def __init__(self, system: SystemSpec, epsilon: float, track_inner: bool = False):
        self.system = system
        self.eps = float(epsilon)
        self.n, self.d = system.n, system.d
        self.signs = np.array([pd.sign for pd in system.pendulums], dtype=float)
        J = max(len(pd.fourier_coeffs) for pd in system.pendulums)
        self.harm = np.zeros((self.n, J))
        self.cc = np.zeros((self.n, J))
        self.sc = np.zeros((self.n, J))
        for i, pd in enumerate(system.pendulums):
            for j, (k, c, s) in enumerate(pd.fourier_coeffs):
                self.harm[i, j], self.cc[i, j], self.sc[i, j] = k, c, s
        K, L, m, a, chi = system.perturbation.arrays
        M = a.size
        self.K = K.reshape(M, self.n) if M else np.zeros((0, self.n))
        self.L = L.reshape(M, self.d) if M else np.zeros((0, self.d))
        self.m, self.a, self.chi = m, a, chi
        self.track_inner = track_inner
        self.zero_q = np.zeros(self.n)

    @property
    def size(self) -> int:
        return 2 * self.n + 2 * self.d + 1 + (self.d if self.track_inner else 0)

    def split(self, y):
        n, d = self.n, self.d
        return y[:n], y[n : 2 * n], y[2 * n : 2 * n + d], y[2 * n + d : 2 * n + 2 * d], y[2 * n + 2 * d]

    def potential_force(self, q, phi, t):
        """(dU/dq, dU/dphi, dU/dt) with U = sum sigma V(q) + eps H1."""
        dV = kernels.fourier_derivative(q, self.harm, self.cc, self.sc)
        gq = self.signs * dV
        if self.eps == 0.0 or self.a.size == 0:
            return gq, np.zeros(self.d), 0.0
        hq, hphi, ht = kernels.h1_gradients(q, phi, t, self.K, self.L, self.m, self.a, self.chi)
        return gq + self.eps * hq, self.eps * hphi, self.eps * ht

    def __call__(self, t, y):
        n, d = self.n, self.d
        p, q, I, phi, _ = self.split(y)
        gq, gphi, gt = self.potential_force(q, phi, t)
        out = np.empty(self.size)
        out[:n] = -gq
        out[n : 2 * n] = self.signs * p
        out[2 * n : 2 * n + d] = -gphi
        out[2 * n + d : 2 * n + 2 * d] = self.system.omega(I)
        out[2 * n + 2 * d] = -gt
        if self.track_inner:
            if self.eps == 0.0 or self.a.size == 0:
                out[2 * n + 2 * d + 1 :] = 0.0
            else:
                _, hphi0, _ = kernels.h1_gradients(self.zero_q, phi, t, self.K, self.L, self.m, self.a, self.chi)
                out[2 * n + 2 * d + 1 :] = -self.eps * hphi0
        return out


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    I: np.ndarray
    phi: np.ndarray
    A: np.ndarray
    energy_drift: float
    pendulum_energy_drift: np.ndarray
    action_drift: np.ndarray
    drift: float
    section_times: np.ndarray
    section_states: np.ndarray
    steps: int
    complete: bool
    exit_reason: str = ""
    final_state: np.ndarray = field(default=None, repr=False)

    def write_csv(self, path) -> None:
        n, d = self.p.shape[1], self.I.shape[1]
        header = ["t"] + [f"p{i + 1}" for i in range(n)] + [f"q{i + 1}" for i in range(n)]
        header += [f"I{i + 1}" for i in range(d)] + [f"phi{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in zip(self.t, self.p, self.q, self.I, self.phi):
                vals = [row[0], *row[1], *row[2], *row[3], *row[4]]
                w.writerow([f"{float(v):.17g}" for v in vals])

    def summary(self) -> dict:
        return {
            "schema": SUMMARY_SCHEMA,
            "t_start": float(self.t[0]),
            "t_end": float(self.t[-1]),
            "drift": float(self.drift),
            "action_drift": [float(v) for v in self.action_drift],
            "energy_drift": float(self.energy_drift),
            "pendulum_energy_drift": [float(v) for v in self.pendulum_energy_drift],
            "sections": int(len(self.section_times)),
            "steps": int(self.steps),
            "complete": bool(self.complete),
            "exit_reason": self.exit_reason,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def extended_energy(system: SystemSpec, epsilon: float, y, t) -> float:
    n, d = system.n, system.d
    p, q, I, phi, A = y[:n], y[n : 2 * n], y[2 * n : 2 * n + d], y[2 * n + d : 2 * n + 2 * d], y[2 * n + 2 * d]
    h1 = eval_h1(system, q, phi, t) if epsilon != 0.0 and system.perturbation.modes else 0.0
    return float(A + eval_h0(system, p, q, I) + epsilon * h1)


def _pack(system, initial):
    p, q, I, phi, t0 = initial
    n, d = system.n, system.d
    y = np.concatenate(
        [
            np.atleast_1d(np.asarray(p, dtype=float)),
            np.atleast_1d(np.asarray(q, dtype=float)),
            np.atleast_1d(np.asarray(I, dtype=float)),
            np.atleast_1d(np.asarray(phi, dtype=float)),
            [0.0],
        ]
    )
    if y.size != 2 * n + 2 * d + 1:
        raise InputError("initial state dimensions do not match the system")
    return y, float(t0)


class _Recorder:
    def __init__(self, system, epsilon, rhs, y0, t0, stride):
        self.system, self.eps, self.rhs = system, epsilon, rhs
        self.stride = max(1, int(stride))
        n, d = system.n, system.d
        self.n, self.d = n, d
        self.samples_t, self.samples_y = [t0], [y0.copy()]
        self.E0 = extended_energy(system, epsilon, y0, t0)
        self.P0 = pendulum_energies(system, y0[:n], y0[n : 2 * n])
        self.I0 = y0[2 * n : 2 * n + d].copy()
        self.energy_drift = 0.0
        self.pend_drift = np.zeros(n)
        self.action_drift = np.zeros(d)
        self.drift = 0.0
        self.sec_t, self.sec_y = [], []
        self.count = 0
        self.next_section = np.floor(t0 / TWO_PI + 1e-12) * TWO_PI + TWO_PI
        if abs(t0 / TWO_PI - round(t0 / TWO_PI)) < 1e-12:
            self.sec_t.append(t0)
            self.sec_y.append(y0.copy())

    def accept(self, t, y, interp=None, t_prev=None):
        n, d = self.n, self.d
        self.count += 1
        if self.count % self.stride == 0:
            self.samples_t.append(t)
            self.samples_y.append(y.copy())
        I = y[2 * n : 2 * n + d]
        self.action_drift = np.maximum(self.action_drift, np.abs(I - self.I0))
        self.drift = max(self.drift, float(np.linalg.norm(I - self.I0)))
        self.energy_drift = max(self.energy_drift, abs(extended_energy(self.system, self.eps, y, t) - self.E0))
        self.pend_drift = np.maximum(self.pend_drift, np.abs(pendulum_energies(self.system, y[:n], y[n : 2 * n]) - self.P0))
        while self.next_section <= t + 1e-12:
            ts = self.next_section
            if interp is not None and t_prev is not None and ts < t:
                ys = interp(ts)
            else:
                ys = y
            self.sec_t.append(ts)
            self.sec_y.append(np.array(ys, dtype=float))
            self.next_section += TWO_PI

    def finish(self, t, y, complete, reason) -> TrajectoryRecord:
        n, d = self.n, self.d
        if self.samples_t[-1] != t:
            self.samples_t.append(t)
            self.samples_y.append(y.copy())
        Y = np.array(self.samples_y)
        return TrajectoryRecord(
            t=np.array(self.samples_t),
            p=Y[:, :n],
            q=Y[:, n : 2 * n],
            I=Y[:, 2 * n : 2 * n + d],
            phi=Y[:, 2 * n + d : 2 * n + 2 * d],
            A=Y[:, 2 * n + 2 * d],
            energy_drift=float(self.energy_drift),
            pendulum_energy_drift=self.pend_drift,
            action_drift=self.action_drift,
            drift=float(self.drift),
            section_times=np.array(self.sec_t),
            section_states=np.array(self.sec_y).reshape(len(self.sec_t), -1),
            steps=self.count,
            complete=complete,
            exit_reason=reason,
            final_state=y.copy(),
        )


def integrate_full(
    system: SystemSpec,
    initial,
    t_end: float,
    tol: float = 1e-10,
    epsilon: float | None = None,
    stride: int = 1,
    method: str = "dop853",
    dt: float = 0.01,
    order: int = 4,
    action_radius: float | None = None,
) -> TrajectoryRecord:
    """Integrate from (p, q, I, phi, t0) up to the absolute time t_end.

    ``method`` is "dop853" (adaptive, tolerance ``tol``) or "symplectic" (fixed step
    ``dt``, splitting kinetic from potential terms, ``order`` 2 or 4).
    """
    eps = system.epsilon if epsilon is None else float(epsilon)
    y0, t0 = _pack(system, initial)
    if not t_end >= t0:
        raise InputError("t_end must not precede the initial time")
    if not tol > 0:
        raise InputError("tol must be positive")
    rhs = _Rhs(system, eps)
    rec = _Recorder(system, eps, rhs, y0, t0, stride)
    n, d = system.n, system.d
    I0 = y0[2 * n : 2 * n + d].copy()

    def outside(y):
        if not np.all(np.isfinite(y)):
            return "non-finite state"
        if action_radius is not None and np.linalg.norm(y[2 * n : 2 * n + d] - I0) > action_radius:
            return "left the action ball"
        return ""

    if t_end == t0:
        return rec.finish(t0, y0, True, "")
    if method == "symplectic":
        return _integrate_split(system, eps, rhs, rec, y0, t0, t_end, dt, order, outside)
    if method != "dop853":
        raise InputError(f"unknown method {method!r}")
    solver = DOP853(rhs, t0, y0, t_end, rtol=tol, atol=tol)
    while solver.status == "running":
        t_prev = solver.t
        msg = solver.step()
        if solver.status == "failed":
            return rec.finish(solver.t, solver.y, False, str(msg))
        rec.accept(solver.t, solver.y, solver.dense_output(), t_prev)
        reason = outside(solver.y)
        if reason:
            return rec.finish(solver.t, solver.y, False, reason)
    return rec.finish(solver.t, solver.y, True, "")


_CBRT2 = 2.0 ** (1.0 / 3.0)
_YOSHIDA = (1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2))


def _integrate_split(system, eps, rhs, rec, y, t, t_end, dt, order, outside):
    if not dt > 0:
        raise InputError("dt must be positive")
    if order not in (2, 4):
        raise InputError("order must be 2 or 4")
    n, d = system.n, system.d
    y = y.copy()
    steps = int(np.ceil((t_end - t) / dt - 1e-12))
    h_base = (t_end - t) / steps
    subs = _YOSHIDA if order == 4 else (1.0,)

    def kick(y, t, h):
        gq, gphi, gt = rhs.potential_force(y[n : 2 * n], y[2 * n + d : 2 * n + 2 * d], t)
        y[:n] -= h * gq
        y[2 * n : 2 * n + d] -= h * gphi
        y[2 * n + 2 * d] -= h * gt

    def drift(y, t, h):
        y[n : 2 * n] += h * rhs.signs * y[:n]
        y[2 * n + d : 2 * n + 2 * d] += h * system.omega(y[2 * n : 2 * n + d])
        return t + h

    for _ in range(steps):
        for w in subs:
            h = w * h_base
            kick(y, t, 0.5 * h)
            t = drift(y, t, h)
            kick(y, t, 0.5 * h)
        rec.accept(t, y)
        reason = outside(y)
        if reason:
            return rec.finish(t, y, False, reason)
    return rec.finish(t, y, True, "")


# -- homoclinic excursions -------------------------------------------------------------


def _saddle_distance(y, n):
    p = y[:n]
    q = (y[n : 2 * n] + np.pi) % TWO_PI - np.pi
    return float(np.sqrt(np.sum(p * p + q * q)))


@dataclass
class JumpResult:
    delta_I: np.ndarray
    raw_delta_I: np.ndarray
    t_seed: float
    t_return: float
    t_closest: float
    closest_distance: float
    steps: int


def measure_homoclinic_jump(
    system: SystemSpec,
    epsilon: float,
    branch,
    witness,
    tol: float = 1e-11,
    seed_distance: float = 1e-6,
    orbits: list[HomoclinicOrbit] | None = None,
    full: bool = False,
):
    """Action change across one homoclinic excursion, corrected for the inner drift.

    The trajectory is seeded on the unperturbed unstable manifold a distance
    ``seed_distance`` from the saddle, on the homoclinic orbit that passes the
    critical phase tau*(I0, theta0, 0) at t = 0.  It is followed until it has left
    the radius-0.5 ball, come back inside radius 0.05 and reached its closest
    approach.  The action change that the inner dynamics on p = q = 0 would have
    produced along the same angles is integrated alongside and subtracted.
    """
    from .reduced import reduced_eval

    I0, theta0 = witness
    I0 = np.atleast_1d(np.asarray(I0, dtype=float))
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    n, d = system.n, system.d
    if orbits is None:
        orbits = branch.orbits if branch is not None else [compute_separatrix(pd) for pd in system.pendulums]
    if branch is not None:
        tau_star = reduced_eval(branch, I0, theta0).tau_star
    else:
        tau_star = np.zeros(n)
    lam = np.array([o.lam for o in orbits])
    c = np.array([o.tail_coeff_left for o in orbits])
    T0 = float(np.max(np.log(c / seed_distance) / lam))
    t_seed = -float(np.max(tau_star)) - T0
    p_s = np.empty(n)
    q_s = np.empty(n)
    for i, orbit in enumerate(orbits):
        u, p, _, _ = orbit.eval_arrays(tau_star[i] + t_seed)
        q_s[i], p_s[i] = float(u), float(p)
    omega = system.omega(I0)
    phi_s = theta0 + omega * t_seed

    rhs = _Rhs(system, epsilon, track_inner=True)
    y0 = np.concatenate([p_s, q_s, I0, phi_s, [0.0], np.zeros(d)])
    cap = TIME_CAP_FACTOR / float(np.min(lam))
    t_max = t_seed + 2 * T0 + 2 * cap
    solver = DOP853(rhs, t_seed, y0, t_max, rtol=tol, atol=tol)
    departed = returned = False
    t_depart = t_return = None
    prev_dist = _saddle_distance(y0, n)
    steps = 0
    closest = None
    while solver.status == "running":
        t_prev, y_prev = solver.t, solver.y.copy()
        solver.step()
        steps += 1
        if solver.status == "failed":
            raise ExcursionFailure("integrator failed during the excursion")
        dist = _saddle_distance(solver.y, n)
        if not departed:
            if dist > DEPART_RADIUS:
                departed, t_depart = True, solver.t
        elif not returned:
            if dist < RETURN_RADIUS:
                returned, t_return = True, solver.t
            elif solver.t - t_depart > cap:
                raise ExcursionFailure(f"no return to the saddle within {cap:.1f} time units")
        if returned and dist > prev_dist:
            interp = solver.dense_output()
            res = minimize_scalar(
                lambda s: _saddle_distance(interp(s), n),
                bounds=(t_prev, solver.t),
                method="bounded",
                options={"xatol": 1e-12},
            )
            # the minimum may sit in the previous step; fall back to the grid point
            if res.fun <= prev_dist:
                closest = (float(res.x), interp(res.x))
            else:
                closest = (t_prev, y_prev)
            break
        prev_dist = dist
        if not departed and solver.t - t_seed > cap + 2 * T0:
            raise ExcursionFailure("trajectory never left the saddle neighbourhood")
    if closest is None:
        raise ExcursionFailure("trajectory did not reach a closest approach after returning")
    t_c, y_c = closest
    raw = y_c[2 * n : 2 * n + d] - I0
    inner = y_c[2 * n + 2 * d + 1 :]
    delta = raw - inner
    if full:
        return JumpResult(delta, raw, t_seed, float(t_return), float(t_c), _saddle_distance(y_c, n), steps)
    return delta
