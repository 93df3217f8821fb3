"""Reduced Poincare function L*(I, theta) = L(tau*(I, theta, 0), I, theta, 0) and the
first-order scattering map built from it.

The branch is certified on a box in (I, phi, s).  A point (I, theta) belongs to the
domain when some s in the box has phi = theta + omega(I) s in the box; the diagonal
shift of tau then moves the certified critical point to s = 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .criticality import CriticalBranch, _angle_offset, newton
from .errors import AccuracyError, DomainError, DomainExit, InputError

H3B_TOL = 1e-4
S_SAMPLES = 201


@dataclass(frozen=True)
class ReducedEval:
    value: float
    grad_I: np.ndarray
    grad_theta: np.ndarray
    tau_star: np.ndarray
    est_error: float = 0.0


@dataclass(frozen=True)
class ScatteringState:
    I: np.ndarray
    theta: np.ndarray

    @classmethod
    def of(cls, I, theta) -> "ScatteringState":
        return cls(np.atleast_1d(np.asarray(I, dtype=float)).copy(), np.atleast_1d(np.asarray(theta, dtype=float)).copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.I, self.theta])


def gauge_s(branch: CriticalBranch, I, theta):
    """An s in the box with theta + omega(I) s inside the phi-box, or None.

    Among the admissible values the one closest to the s-centre is returned.
    """
    box = branch.box
    I = np.atleast_1d(np.asarray(I, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(np.abs(I - box.I_center) > box.I_half + 1e-12):
        return None
    omega = branch.system.omega(I)
    s_grid = box.s_center + np.linspace(-box.s_half, box.s_half, S_SAMPLES)
    s_grid = s_grid[np.argsort(np.abs(s_grid - box.s_center), kind="stable")]
    phis = theta[None, :] + s_grid[:, None] * omega[None, :]
    offs = _angle_offset(phis, box.phi_center[None, :])
    ok = np.all(np.abs(offs) <= box.phi_half[None, :] + 1e-12, axis=1)
    if not np.any(ok):
        return None
    return float(s_grid[np.argmax(ok)])


def in_domain(branch: CriticalBranch, I, theta) -> bool:
    return gauge_s(branch, I, theta) is not None


def reduced_eval(branch: CriticalBranch, I, theta, tau_hint=None) -> ReducedEval:
    """L* and its envelope-theorem gradient at (I, theta)."""
    I = np.atleast_1d(np.asarray(I, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if I.shape != (branch.d,) or theta.shape != (branch.d,):
        raise InputError("I and theta must have the rotor dimension")
    s = gauge_s(branch, I, theta)
    if s is None:
        raise DomainError(f"(I, theta) = ({I}, {theta}) is outside the reduced domain")
    if tau_hint is None:
        phi = theta + branch.system.omega(I) * s
        idx = branch.nearest_node(I, phi, s)
        if idx is None:
            raise DomainError("branch has no certified nodes")
        _, _, s_node = branch.node_params(idx)
        tau_hint = branch.grid[idx].tau_star - s_node
    mk = branch.melnikov
    settings = branch.settings
    try:
        cp, ok = newton(mk, tau_hint, I, theta, 0.0, settings)
    except AccuracyError as exc:
        raise DomainError(f"quadrature failed while locating tau*: {exc}") from exc
    if not ok or not cp.nondegenerate(settings.nondegen_tol):
        raise DomainError("critical point lost at this (I, theta)")
    if np.max(np.abs(cp.tau_star - np.asarray(tau_hint))) > settings.jump_bound + 1.0:
        raise DomainError("Newton jumped to another critical point")
    ev = mk.evaluate(cp.tau_star, I, theta, 0.0, settings.quad_tol, want_hess=False)
    return ReducedEval(ev.value, ev.grad_I, ev.grad_phi, cp.tau_star, ev.est_error)


class ReducedFunction:
    """L* with a warm-start memory of the last tau*, so iterations stay on one branch."""

    def __init__(self, branch: CriticalBranch):
        self.branch = branch
        self._hint = None

    def reset(self, tau_hint=None):
        self._hint = None if tau_hint is None else np.array(tau_hint, dtype=float)

    def __call__(self, I, theta) -> ReducedEval:
        ev = reduced_eval(self.branch, I, theta, self._hint)
        self._hint = ev.tau_star
        return ev

    def gradient(self, I, theta):
        ev = self(I, theta)
        return ev.grad_I, ev.grad_theta


def h3b_check(branch: CriticalBranch, I0, theta_grid, tol: float = H3B_TOL) -> dict:
    """Largest |dL*/dtheta| over theta_grid at action I0; passes when it beats tol."""
    I0 = np.atleast_1d(np.asarray(I0, dtype=float))
    best, best_theta, best_grad = -1.0, None, None
    skipped = 0
    err = 0.0
    for theta in theta_grid:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        try:
            ev = reduced_eval(branch, I0, theta)
        except DomainError:
            skipped += 1
            continue
        g = float(np.max(np.abs(ev.grad_theta)))
        if g > best:
            best, best_theta, best_grad, err = g, theta, ev.grad_theta, ev.est_error
    if best_theta is None:
        return {"hypothesis": "H3b", "pass": False, "reason": "no grid point inside the reduced domain",
                "max_grad_theta": 0.0, "theta0": None, "grad_theta": None, "I0": I0.tolist(), "skipped": skipped}
    # a positive margin must survive the quadrature error
    passed = best - err > tol
    return {
        "hypothesis": "H3b",
        "pass": bool(passed),
        "reason": "dL*/dtheta nonzero" if passed else f"max |dL*/dtheta| = {best:.3e} not above {tol:.1e}",
        "max_grad_theta": float(best),
        "theta0": best_theta.tolist(),
        "grad_theta": best_grad.tolist(),
        "I0": I0.tolist(),
        "skipped": skipped,
    }


def scattering_step(branch_or_fn, state: ScatteringState, epsilon: float) -> ScatteringState:
    """(I, theta) -> (I + eps dL*/dtheta, theta - eps dL*/dI)."""
    fn = branch_or_fn if isinstance(branch_or_fn, ReducedFunction) else ReducedFunction(branch_or_fn)
    try:
        ev = fn(state.I, state.theta)
    except DomainError as exc:
        raise DomainExit(str(exc), partial=[state]) from exc
    new = ScatteringState(state.I + epsilon * ev.grad_theta, state.theta - epsilon * ev.grad_I)
    if not in_domain(fn.branch, new.I, new.theta):
        raise DomainExit("scattering step left the branch domain", partial=[state, new])
    return new


@dataclass(frozen=True)
class PseudoOrbit:
    states: tuple
    complete: bool

    def actions(self) -> np.ndarray:
        return np.array([s.I for s in self.states])

    def angles(self) -> np.ndarray:
        return np.array([s.theta for s in self.states])


def pseudo_orbit(branch: CriticalBranch, x0: ScatteringState, epsilon: float, n_steps: int | None = None) -> PseudoOrbit:
    """Iterate the scattering map min(n_steps, floor(1/eps)) times, stopping early on domain exit."""
    if not in_domain(branch, x0.I, x0.theta):
        raise InputError("initial state is outside the reduced domain")
    if epsilon == 0:
        steps = n_steps if n_steps is not None else 1
    else:
        cap = int(np.floor(1.0 / abs(epsilon) + 1e-9))
        steps = cap if n_steps is None else min(n_steps, cap)
    fn = ReducedFunction(branch)
    states = [x0]
    for _ in range(steps):
        try:
            states.append(scattering_step(fn, states[-1], epsilon))
        except DomainExit:
            return PseudoOrbit(tuple(states), False)
    return PseudoOrbit(tuple(states), True)


def write_theta_scan_csv(branch: CriticalBranch, I0, theta_grid, path) -> None:
    d = branch.d
    header = [f"I{i + 1}" for i in range(d)] + [f"theta{i + 1}" for i in range(d)] + ["Lstar"]
    header += [f"grad_I{i + 1}" for i in range(d)] + [f"grad_theta{i + 1}" for i in range(d)]
    I0 = np.atleast_1d(np.asarray(I0, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for theta in theta_grid:
            theta = np.atleast_1d(np.asarray(theta, dtype=float))
            try:
                ev = reduced_eval(branch, I0, theta)
            except DomainError:
                continue
            vals = list(I0) + list(theta) + [ev.value] + list(ev.grad_I) + list(ev.grad_theta)
            w.writerow([f"{float(v):.17g}" for v in vals])
