"""Hamiltonian flow of L* on the cylinder and the pseudo-orbit shadowing study.

The flow is xdot = J grad L*(x), i.e. Idot = dL*/dtheta, thetadot = -dL*/dI.  One
scattering step is an explicit Euler step of length eps for this flow, so pseudo-orbits
of N = floor(1/eps) steps should stay within K eps of the time-1 flow.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import DOP853, OdeSolution
from scipy.interpolate import RegularGridInterpolator

from .criticality import CriticalBranch
from .errors import DomainError, DomainExit, InputError
from .reduced import ReducedEval, ReducedFunction, ScatteringState, in_domain, pseudo_orbit

SCHEMA = "apriori-diffusion/shadow-report/1"


@dataclass
class EffectiveCurve:
    t: np.ndarray
    I: np.ndarray  # (samples, d)
    theta: np.ndarray  # (samples, d)
    steps: int
    max_drift: float
    complete: bool
    exit_reason: str = ""
    solution: OdeSolution | None = field(default=None, repr=False)

    def __call__(self, t):
        """State (I, theta) at time t via the dense output of the integrator."""
        if self.solution is None:
            if len(self.t) and np.all(np.asarray(t) == self.t[0]):
                return np.concatenate([self.I[0], self.theta[0]])
            raise DomainError("curve has no dense output")
        if np.any(np.asarray(t) > self.t[-1] + 1e-12):
            raise DomainError("requested time beyond the computed curve")
        return self.solution(t)

    def write_csv(self, path) -> None:
        d = self.I.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"I{i + 1}" for i in range(d)] + [f"theta{i + 1}" for i in range(d)])
            for t, I, th in zip(self.t, self.I, self.theta):
                w.writerow([f"{float(v):.17g}" for v in [t, *I, *th]])


class _VectorField:
    def __init__(self, fn, d):
        self.fn = fn
        self.d = d

    def __call__(self, t, y):
        ev = self.fn(y[: self.d], y[self.d :])
        return np.concatenate([ev.grad_theta, -ev.grad_I])


def integrate_effective(
    branch: CriticalBranch,
    x0: ScatteringState,
    t_end: float,
    tol: float = 1e-10,
    reduced=None,
) -> EffectiveCurve:
    """Adaptive DOP853 integration of the L* flow; stops early with a partial curve on domain exit."""
    if not tol > 0:
        raise InputError("tol must be positive")
    fn = reduced if reduced is not None else ReducedFunction(branch)
    d = branch.d
    if not in_domain(branch, x0.I, x0.theta):
        raise InputError("initial state is outside the reduced domain")
    y0 = x0.as_vector()
    try:
        L0 = fn(x0.I, x0.theta).value
    except DomainError as exc:
        raise InputError(f"L* undefined at the initial state: {exc}") from exc
    ts, ys, interps = [0.0], [y0], []
    drift = 0.0
    reason = ""
    complete = True
    if t_end > 0:
        solver = DOP853(_VectorField(fn, d), 0.0, y0, t_end, rtol=tol, atol=tol)
        while solver.status == "running":
            try:
                msg = solver.step()
            except DomainError as exc:
                complete, reason = False, str(exc)
                break
            if solver.status == "failed":
                complete, reason = False, str(msg)
                break
            interps.append(solver.dense_output())
            ts.append(solver.t)
            ys.append(solver.y.copy())
            try:
                drift = max(drift, abs(fn(solver.y[:d], solver.y[d:]).value - L0))
            except DomainError as exc:
                complete, reason = False, str(exc)
                break
    ys = np.array(ys)
    sol = OdeSolution(np.array(ts), interps) if interps else None
    return EffectiveCurve(np.array(ts), ys[:, :d], ys[:, d:], len(interps), float(drift), complete, reason, sol)


@dataclass
class ShadowReport:
    epsilons: list
    max_dev: list
    fitted_K: float
    fit_quality: float
    slope: float
    degenerate: bool
    steps: list
    complete: list

    def to_json(self) -> str:
        payload = {
            "schema": SCHEMA,
            "epsilons": [float(e) for e in self.epsilons],
            "max_dev": [float(m) for m in self.max_dev],
            "fitted_K": float(self.fitted_K),
            "r2": float(self.fit_quality),
            "slope": float(self.slope),
            "degenerate": bool(self.degenerate),
            "steps": [int(s) for s in self.steps],
            "complete": [bool(c) for c in self.complete],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def pseudo_orbit_deviation(curve: EffectiveCurve, orbit, epsilon: float) -> float:
    """max_i ||x_i - gamma(i eps)|| over the pseudo-orbit states."""
    states = np.array([s.as_vector() for s in orbit.states])
    times = epsilon * np.arange(len(states))
    gamma = np.asarray(curve(times)).reshape(states.shape[1], -1).T
    return float(np.max(np.linalg.norm(states - gamma, axis=1)))


def fit_linear_scaling(epsilons, devs):
    """(K through the origin, log-log slope, log-log R^2)."""
    e = np.asarray(epsilons, dtype=float)
    m = np.asarray(devs, dtype=float)
    K = float(np.dot(e, m) / np.dot(e, e))
    x, y = np.log(e), np.log(np.maximum(m, 1e-300))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return K, float(slope), r2


def shadow_scaling(
    branch: CriticalBranch,
    x0: ScatteringState,
    epsilons,
    t_end: float = 1.0,
    tol: float = 1e-11,
    workers: int = 1,
) -> ShadowReport:
    epsilons = [float(e) for e in epsilons]
    if any(not e > 0 for e in epsilons):
        raise InputError("epsilons must be positive")
    curve = integrate_effective(branch, x0, t_end, tol)
    if not curve.complete:
        raise DomainExit(f"effective flow left the domain before t = {t_end}: {curve.exit_reason}", partial=curve)

    def run(eps):
        n = int(np.floor(t_end / eps + 1e-9))
        orb = pseudo_orbit(branch, x0, eps, n)
        return orb, n

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, epsilons))
    else:
        runs = [run(e) for e in epsilons]
    usable_e, devs, steps, complete = [], [], [], []
    for eps, (orb, n) in zip(epsilons, runs):
        steps.append(len(orb.states) - 1)
        complete.append(orb.complete)
        if orb.complete:
            usable_e.append(eps)
            devs.append(pseudo_orbit_deviation(curve, orb, eps))
    if len(usable_e) < 2:
        raise InputError("fewer than two epsilons gave complete pseudo-orbits")
    scale = max(1.0, float(np.max(np.abs(x0.as_vector()))))
    degenerate = bool(max(devs) < 1e-12 * scale)
    K, slope, r2 = fit_linear_scaling(usable_e, devs)
    return ShadowReport(usable_e, devs, K, r2, slope, degenerate, steps, complete)


def lipschitz_bound(branch: CriticalBranch, points, h: float = 1e-5) -> float:
    """Largest spectral norm of the Jacobian of J grad L* over the sample points."""
    fn = ReducedFunction(branch)
    d = branch.d
    field_ = _VectorField(fn, d)
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        J = np.empty((2 * d, 2 * d))
        for k in range(2 * d):
            e = np.zeros(2 * d)
            e[k] = h
            fn.reset()
            J[:, k] = (field_(0.0, x + e) - field_(0.0, x - e)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(J, 2)))
    return worst


def gronwall_check(branch: CriticalBranch, points, epsilon: float, separation: float = 1e-4, seed: int = 0) -> dict:
    """Compare the expansion of nearby pairs over time eps with exp(C1 eps)."""
    rng = np.random.default_rng(seed)
    pts = [np.asarray(p, dtype=float) for p in points]
    C1 = lipschitz_bound(branch, pts)
    d = branch.d
    worst = 0.0
    for x in pts:
        dx = rng.normal(size=2 * d)
        dx *= separation / np.linalg.norm(dx)
        a = integrate_effective(branch, ScatteringState(x[:d], x[d:]), epsilon, 1e-12)
        b = integrate_effective(branch, ScatteringState(x[:d] + dx[:d], x[d:] + dx[d:]), epsilon, 1e-12)
        if not (a.complete and b.complete):
            continue
        ratio = np.linalg.norm(b(epsilon) - a(epsilon)) / separation
        worst = max(worst, float(ratio))
    bound = float(np.exp(C1 * epsilon))
    return {"C1": C1, "max_expansion": worst, "bound": bound, "pass": worst <= bound * (1 + 1e-6)}


class CachedReduced:
    """Gradient of L* interpolated from a tensor grid (faster, adds interpolation error).

    Only the gradient is tabulated; ``value`` is interpolated as well but the drift
    diagnostics should be read with that in mind.
    """

    def __init__(self, branch: CriticalBranch, I_axes, theta_axes):
        self.branch = branch
        axes = [np.asarray(a, dtype=float) for a in list(I_axes) + list(theta_axes)]
        d = branch.d
        shape = tuple(len(a) for a in axes)
        vals = np.full(shape + (1 + 2 * d,), np.nan)
        fn = ReducedFunction(branch)
        for idx in np.ndindex(*shape):
            x = np.array([a[i] for a, i in zip(axes, idx)])
            try:
                ev = fn(x[:d], x[d:])
            except DomainError:
                fn.reset()
                continue
            vals[idx] = np.concatenate([[ev.value], ev.grad_I, ev.grad_theta])
        if np.any(np.isnan(vals)):
            raise DomainError("cached grid extends outside the reduced domain")
        self._interp = RegularGridInterpolator(axes, vals, method="cubic", bounds_error=True)
        self.d = d

    def __call__(self, I, theta) -> ReducedEval:
        x = np.concatenate([np.atleast_1d(I), np.atleast_1d(theta)])
        try:
            v = self._interp(x[None, :])[0]
        except ValueError as exc:
            raise DomainError(str(exc)) from exc
        d = self.d
        return ReducedEval(float(v[0]), v[1 : 1 + d], v[1 + d :], np.array([]), 0.0)

    def reset(self, tau_hint=None):
        pass
