"""Non-degenerate critical points of tau -> L(tau, I, phi, s) and their continuation."""

from __future__ import annotations

import csv
import itertools
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AccuracyError, DomainError, InputError
from .melnikov import Melnikov, MelnikovEval

TWO_PI = 2 * np.pi
# a failed grid step is retried in up to 2**4 pieces
MAX_SUBDIVISIONS = 4


@dataclass(frozen=True)
class Settings:
    newton_tol: float = 1e-10
    nondegen_tol: float = 1e-6
    quad_tol: float = 1e-12
    max_iter: int = 50
    dedupe_dist: float = 1e-6
    jump_bound: float = 0.5

    def __post_init__(self):
        for name in ("newton_tol", "nondegen_tol", "quad_tol", "dedupe_dist", "jump_bound"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")


@dataclass(frozen=True)
class CriticalPoint:
    tau_star: np.ndarray
    grad_norm: float
    hess_det: float
    hess_eigs: np.ndarray
    base_point: tuple  # (I, phi, s)
    rel_det: float
    hess: np.ndarray = field(repr=False, default=None)

    def nondegenerate(self, tol: float) -> bool:
        return abs(self.hess_det) > tol and self.rel_det > tol


def _certify(ev: MelnikovEval, tau, base) -> CriticalPoint:
    H = ev.hess_tau
    det = float(np.linalg.det(H))
    rows = np.prod(np.linalg.norm(H, axis=1))
    rel = abs(det) / rows if rows > 0 else 0.0
    eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
    return CriticalPoint(
        tau_star=np.array(tau, dtype=float),
        grad_norm=float(np.sum(np.abs(ev.grad_tau))),
        hess_det=det,
        hess_eigs=eigs,
        base_point=base,
        rel_det=float(rel),
        hess=H,
    )


def _base(I, phi, s):
    return (np.atleast_1d(np.asarray(I, dtype=float)).copy(), np.atleast_1d(np.asarray(phi, dtype=float)).copy(), float(s))


def newton(mk: Melnikov, tau0, I, phi, s, settings: Settings = Settings()):
    """Damped Newton on grad_tau L; returns (CriticalPoint, converged)."""
    tau = np.array(tau0, dtype=float).reshape(-1)
    base = _base(I, phi, s)
    ev = mk.evaluate(tau, I, phi, s, settings.quad_tol)
    gnorm = np.linalg.norm(ev.grad_tau)
    for _ in range(settings.max_iter):
        if np.sum(np.abs(ev.grad_tau)) < settings.newton_tol:
            return _certify(ev, tau, base), True
        H = ev.hess_tau
        try:
            step = -np.linalg.solve(H, ev.grad_tau)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, ev.grad_tau, rcond=None)[0]
        if not np.all(np.isfinite(step)) or not np.any(step):
            break
        # keep steps on the scale of the oscillation
        big = np.max(np.abs(step))
        if big > 2.0:
            step *= 2.0 / big
        alpha = 1.0
        accepted = False
        for _ in range(30):
            trial = tau + alpha * step
            ev_t = mk.evaluate(trial, I, phi, s, settings.quad_tol)
            gt = np.linalg.norm(ev_t.grad_tau)
            if gt <= (1 - 1e-4 * alpha) * gnorm or gt < settings.newton_tol / 10:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        tau, ev, gnorm = trial, ev_t, gt
    cp = _certify(ev, tau, base)
    return cp, cp.grad_norm < settings.newton_tol


def _tau_periods(mk: Melnikov, I) -> np.ndarray:
    """Seed window per tau component: the longest period among the frequencies that move it."""
    omega = mk.system.omega(I)
    periods = np.full(mk.n, TWO_PI)
    if mk.trivial:
        return periods
    nu = np.abs(mk.L @ omega + mk.m)
    for i in range(mk.n):
        touch = (mk.K[:, i] != 0) & (mk.a != 0)
        if np.any(touch):
            live = nu[touch][nu[touch] > 1e-9]
            slowest = np.min(live) if live.size else 0.0
            periods[i] = TWO_PI / max(slowest, 1.0 / 8)
    return periods


def find_critical_points(
    system,
    orbits,
    I,
    phi,
    s,
    seeds_per_dim: int = 8,
    settings: Settings = Settings(),
    workers: int = 1,
    mk: Melnikov | None = None,
):
    """Newton from a uniform seed grid; returns (nondegenerate, degenerate) lists.

    Nondegenerate points are sorted by decreasing |det Hess|, ties going to the smallest |tau|.
    """
    if seeds_per_dim < 1:
        raise InputError("seeds_per_dim must be >= 1")
    mk = mk or Melnikov(system, orbits, settings.quad_tol)
    n = mk.n
    if mk.trivial:
        return [], []
    periods = _tau_periods(mk, I)
    axes = []
    for P in periods:
        count = seeds_per_dim * max(1, int(round(P / TWO_PI)))
        axes.append(-0.5 * P + P * (np.arange(count) + 0.5) / count)
    seeds = [np.array(c) for c in itertools.product(*axes)]

    def run(seed):
        try:
            return newton(mk, seed, I, phi, s, settings)
        except AccuracyError:
            return None, False

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(sd) for sd in seeds]

    found: list[CriticalPoint] = []
    for cp, ok in results:
        if not ok:
            continue
        if any(np.max(np.abs(cp.tau_star - other.tau_star)) < settings.dedupe_dist for other in found):
            continue
        found.append(cp)
    good = [cp for cp in found if cp.nondegenerate(settings.nondegen_tol)]
    bad = [cp for cp in found if not cp.nondegenerate(settings.nondegen_tol)]
    good.sort(key=lambda cp: (-round(abs(cp.hess_det), 9), float(np.max(np.abs(cp.tau_star)))))
    return good, bad


@dataclass(frozen=True)
class Box:
    """U = I-ball x phi-box x s-interval, as centres and half-widths."""

    I_center: np.ndarray
    phi_center: np.ndarray
    s_center: float
    I_half: np.ndarray
    phi_half: np.ndarray
    s_half: float

    @classmethod
    def around(cls, I, phi, s, I_half=0.2, angle_half=0.5):
        I = np.atleast_1d(np.asarray(I, dtype=float))
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        return cls(
            I,
            phi,
            float(s),
            np.broadcast_to(np.asarray(I_half, dtype=float), I.shape).copy(),
            np.broadcast_to(np.asarray(angle_half, dtype=float), phi.shape).copy(),
            float(angle_half),
        )

    @property
    def d(self) -> int:
        return self.I_center.size

    def contains(self, I, phi, s, slack: float = 1e-12) -> bool:
        I = np.atleast_1d(np.asarray(I, dtype=float))
        dphi = _angle_offset(np.atleast_1d(np.asarray(phi, dtype=float)), self.phi_center)
        ds = _angle_offset(np.array([float(s)]), np.array([self.s_center]))[0]
        return bool(
            np.all(np.abs(I - self.I_center) <= self.I_half + slack)
            and np.all(np.abs(dphi) <= self.phi_half + slack)
            and abs(ds) <= self.s_half + slack
        )

    def to_dict(self) -> dict:
        return {
            "I_center": self.I_center.tolist(),
            "I_half": self.I_half.tolist(),
            "phi_center": self.phi_center.tolist(),
            "phi_half": self.phi_half.tolist(),
            "s_center": self.s_center,
            "s_half": self.s_half,
        }


def _angle_offset(x, center):
    """Offset of x from center, wrapped to (-pi, pi]."""
    return (np.asarray(x) - np.asarray(center) + np.pi) % TWO_PI - np.pi


@dataclass
class CriticalBranch:
    system: object
    orbits: tuple
    box: Box
    axes: list  # coordinates per parameter: I_1..I_d, phi_1..phi_d, s
    grid: dict  # node index tuple -> CriticalPoint
    failures: dict  # node index tuple -> reason
    continuation_ok: bool
    settings: Settings
    melnikov: Melnikov = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def d(self) -> int:
        return self.system.d

    def node_params(self, idx):
        vals = [ax[i] for ax, i in zip(self.axes, idx)]
        d = self.d
        return np.array(vals[:d]), np.array(vals[d : 2 * d]), float(vals[2 * d])

    def nearest_node(self, I, phi, s):
        d = self.d
        coords = list(np.atleast_1d(I)) + list(self.box.phi_center + _angle_offset(phi, self.box.phi_center))
        coords.append(self.box.s_center + _angle_offset(np.array([s]), np.array([self.box.s_center]))[0])
        idx = tuple(int(np.argmin(np.abs(ax - c))) for ax, c in zip(self.axes, coords))
        if idx in self.grid:
            return idx
        ok = list(self.grid)
        if not ok:
            return None
        scaled = np.array([[ (self.axes[k][j[k]] - coords[k]) for k in range(2 * d + 1)] for j in ok])
        return ok[int(np.argmin(np.sum(scaled**2, axis=1)))]

    def locate(self, I, phi, s, tau_hint=None, check_box: bool = True) -> CriticalPoint:
        """tau*(I, phi, s) on this branch: Newton from the nearest node (or a hint)."""
        if check_box and not self.box.contains(I, phi, s):
            raise DomainError("point outside the branch box")
        if tau_hint is None:
            idx = self.nearest_node(I, phi, s)
            if idx is None:
                raise DomainError("branch has no certified nodes")
            tau_hint = self.grid[idx].tau_star
        cp, ok = newton(self.melnikov, tau_hint, I, phi, s, self.settings)
        if not ok or not cp.nondegenerate(self.settings.nondegen_tol):
            raise DomainError("critical point could not be continued to this parameter")
        if np.max(np.abs(cp.tau_star - np.asarray(tau_hint))) > 2 * self.settings.jump_bound + 1.0:
            raise DomainError("Newton left the branch")
        return cp

    def min_abs_det(self) -> float:
        return min((abs(cp.hess_det) for cp in self.grid.values()), default=0.0)

    def max_grad_norm(self) -> float:
        return max((cp.grad_norm for cp in self.grid.values()), default=np.inf)


def _correct(mk, guess, here, params, settings):
    I, phi, s = params
    try:
        cp, ok = newton(mk, guess, I, phi, s, settings)
    except AccuracyError as exc:
        return None, f"quadrature: {exc}"
    if not ok:
        return None, "Newton did not converge"
    if not cp.nondegenerate(settings.nondegen_tol):
        return None, f"degenerate Hessian (det {cp.hess_det:.3e})"
    if np.max(np.abs(cp.tau_star - here)) >= settings.jump_bound:
        return None, "branch jump"
    return cp, ""


def _track(mk, settings, start_params, end_params, here, guess):
    """Corrected critical point at end_params, halving the parameter step on failure."""
    cp, reason = _correct(mk, guess, here, end_params, settings)
    if cp is not None:
        return cp, ""
    a = [np.atleast_1d(np.asarray(v, dtype=float)) for v in start_params]
    b = [np.atleast_1d(np.asarray(v, dtype=float)) for v in end_params]
    for level in range(1, MAX_SUBDIVISIONS + 1):
        pieces = 2**level
        tau = np.asarray(here, dtype=float)
        prev = None
        for j in range(1, pieces + 1):
            w = j / pieces
            I, phi, s = ((1 - w) * x + w * y for x, y in zip(a, b))
            g = tau if prev is None else 2 * tau - prev
            sub, _ = _correct(mk, g, tau, (I, phi, float(s[0])), settings)
            if sub is None:
                break
            prev, tau = tau, sub.tau_star
        else:
            return sub, ""
    return None, reason


def continue_branch(
    system,
    orbits,
    start: CriticalPoint,
    box: Box | None = None,
    grid_steps: int | tuple = 5,
    settings: Settings = Settings(),
    mk: Melnikov | None = None,
) -> CriticalBranch:
    """Predictor-corrector continuation of ``start`` over a grid on ``box``."""
    if not start.nondegenerate(settings.nondegen_tol):
        raise InputError("continuation needs a nondegenerate starting point")
    mk = mk or Melnikov(system, orbits, settings.quad_tol)
    I0, phi0, s0 = start.base_point
    box = box or Box.around(I0, phi0, s0)
    d = system.d
    centers = list(box.I_center) + list(box.phi_center) + [box.s_center]
    halves = list(box.I_half) + list(box.phi_half) + [box.s_half]
    steps = np.broadcast_to(np.asarray(grid_steps, dtype=int), (len(centers),))
    if np.any(steps < 1):
        raise InputError("grid_steps must be >= 1")
    axes = [np.linspace(c - h, c + h, k) if k > 1 else np.array([c]) for c, h, k in zip(centers, halves, steps)]
    shape = tuple(len(a) for a in axes)

    # anchor: node nearest to the start point, corrected from the start's tau*
    start_coords = list(I0) + list(box.phi_center + _angle_offset(phi0, box.phi_center))
    start_coords.append(box.s_center + _angle_offset(np.array([s0]), np.array([box.s_center]))[0])
    anchor = tuple(int(np.argmin(np.abs(ax - c))) for ax, c in zip(axes, start_coords))

    branch = CriticalBranch(system, tuple(orbits), box, axes, {}, {}, False, settings, mk)
    queue = deque()
    I, phi, s = branch.node_params(anchor)
    cp, ok = newton(mk, start.tau_star, I, phi, s, settings)
    if ok and cp.nondegenerate(settings.nondegen_tol) and np.max(np.abs(cp.tau_star - start.tau_star)) < settings.jump_bound + 1.0:
        branch.grid[anchor] = cp
        queue.append((anchor, None))
    else:
        branch.failures[anchor] = "anchor correction failed"
    visited = {anchor}
    while queue:
        idx, parent = queue.popleft()
        here = branch.grid[idx].tau_star
        for axis in range(len(shape)):
            for step in (-1, 1):
                nb = list(idx)
                nb[axis] += step
                nb = tuple(nb)
                if nb[axis] < 0 or nb[axis] >= shape[axis] or nb in visited:
                    continue
                visited.add(nb)
                # secant predictor when the node behind us along this axis is known
                back = list(idx)
                back[axis] -= step
                back = tuple(back)
                guess = here
                if back in branch.grid:
                    guess = 2 * here - branch.grid[back].tau_star
                cp, reason = _track(mk, settings, branch.node_params(idx), branch.node_params(nb), here, guess)
                if cp is None:
                    branch.failures[nb] = reason
                else:
                    branch.grid[nb] = cp
                    queue.append((nb, idx))
    total = int(np.prod(shape))
    branch.continuation_ok = len(branch.grid) == total and not branch.failures
    return branch


def h3a_report(branch: CriticalBranch | None, nondegen_tol: float | None = None) -> dict:
    """Verdict on the nondegenerate-critical-point hypothesis over the branch box."""
    if branch is None or not branch.grid:
        return {
            "hypothesis": "H3a",
            "pass": False,
            "reason": "no nondegenerate critical points",
            "min_abs_det": 0.0,
            "max_grad_norm": None,
            "nodes": 0,
            "failures": 0,
            "box": None if branch is None else branch.box.to_dict(),
        }
    tol = branch.settings.nondegen_tol if nondegen_tol is None else nondegen_tol
    min_det = branch.min_abs_det()
    max_grad = branch.max_grad_norm()
    min_rel = min(cp.rel_det for cp in branch.grid.values())
    passed = branch.continuation_ok and min_det > tol and min_rel > tol and max_grad < branch.settings.newton_tol
    if passed:
        reason = "branch continued over the whole box"
    elif not branch.continuation_ok:
        reason = f"continuation failed at {len(branch.failures)} nodes"
    else:
        reason = f"min |det Hess| {min_det:.3e} not above threshold {tol:.1e}"
    return {
        "hypothesis": "H3a",
        "pass": bool(passed),
        "reason": reason,
        "min_abs_det": float(min_det),
        "max_grad_norm": float(max_grad),
        "nodes": len(branch.grid),
        "failures": len(branch.failures),
        "box": branch.box.to_dict(),
    }


def write_branch_csv(branch: CriticalBranch, path) -> None:
    n, d = branch.n, branch.d
    header = [f"I{i + 1}" for i in range(d)] + [f"phi{i + 1}" for i in range(d)] + ["s"]
    header += [f"tau{i + 1}" for i in range(n)] + ["det_hess"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for idx in sorted(branch.grid):
            I, phi, s = branch.node_params(idx)
            cp = branch.grid[idx]
            vals = list(I) + list(phi) + [s] + list(cp.tau_star) + [cp.hess_det]
            w.writerow([f"{float(v):.17g}" for v in vals])
