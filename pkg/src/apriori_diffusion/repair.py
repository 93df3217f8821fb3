"""Explicit small perturbations that restore the two nondegeneracy hypotheses.

Stage 1 adds delta2 * sum_i f_i(q_i) cos(t + b_i), which puts a critical point of
tau -> L at a chosen tau*.  Stage 2 adds delta3 * sum_i g_i(q_i) cos(t + c_i), which
shifts the Hessian at tau* by delta3 * diag(lambda_i) without moving the critical point.
The H3b stage adds delta * F(q_1) sum_i cos(phi_i + c_i), tilting dL*/dtheta along the
first axis.  Every stage records what it built so the result can be re-checked.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .criticality import Settings, _tau_periods, find_critical_points, newton
from .errors import AccuracyError, InputError, NumericalFailure, RepairFailure, SearchFailure
from .homoclinic import HomoclinicOrbit, compute_separatrix
from .melnikov import Melnikov, _transforms, fourier_transform_coeffs
from .model import FourierFunction, PerturbationSpec, SystemSpec, product_modes

SCHEMA = "apriori-diffusion/repair-certificate/1"
HARMONIC_CAP = 8
ZERO_TOL = 1e-9
DELTA3_CANDIDATES = 20
SEARCH_PERIODS = 8
SEARCH_SAMPLES = 48
DELTA_SAFETY = 0.9

__all__ = [
    "fourier_transform_coeffs",
    "basis_functions",
    "choose_basis",
    "Stage1",
    "Stage2",
    "H3bStage",
    "RepairCertificate",
    "repair_h3a_stage1",
    "repair_h3a_stage2",
    "repair_h3b",
    "poly_coefficients",
    "h3b_coefficients",
    "repair_system",
]


def basis_functions(cap: int = HARMONIC_CAP):
    """cos q, sin q, cos 2q, sin 2q, ... up to the harmonic cap."""
    for k in range(1, cap + 1):
        yield FourierFunction(((k, 1.0, 0.0),))
        yield FourierFunction(((k, 0.0, 1.0),))


def describe(f: FourierFunction) -> str:
    parts = []
    for k, c, s in f.terms:
        arg = "q" if k == 1 else f"{k}q"
        if c:
            parts.append(f"cos {arg}" if c == 1 else f"{c:g} cos {arg}")
        if s:
            parts.append(f"sin {arg}" if s == 1 else f"{s:g} sin {arg}")
    return " + ".join(parts) or "0"


def choose_basis(orbit: HomoclinicOrbit, freq: float, tol: float = 1e-12, cap: int = HARMONIC_CAP):
    """First basis function whose transform pair at ``freq`` is not numerically zero.

    Returns (f, A1, A2); raises RepairFailure when the whole basis vanishes.
    """
    for f in basis_functions(cap):
        A1, A2 = _pair(orbit, f, freq, tol)
        if np.hypot(A1, A2) > ZERO_TOL:
            return f, A1, A2
    raise RepairFailure(f"all basis functions up to harmonic {cap} have vanishing transform at frequency {freq:g}")


def _pair(orbit, f, freq, tol):
    rows, _ = _transforms(orbit, [f], float(freq), tol, derivative=False)
    return float(rows[0, 0]), float(rows[0, 1])


def _mode_dicts(pert: PerturbationSpec) -> list:
    return [
        {"k": list(md.k), "l": list(md.l), "m": md.m, "amplitude": md.amplitude, "phase": md.phase}
        for md in pert.modes
    ]


def _time_modes(funcs, phases, delta, n, d) -> PerturbationSpec:
    """delta * sum_i f_i(q_i) cos(t + phase_i)."""
    parts = PerturbationSpec()
    zero_l = (0,) * d
    for i, (f, ph) in enumerate(zip(funcs, phases)):
        parts = parts + product_modes(f, i, n, zero_l, 1, ph, delta)
    return parts


def _check_budget(delta_budget):
    if not (np.isfinite(delta_budget) and delta_budget > 0):
        raise InputError("delta_budget must be positive")


def _check_target(system, target):
    I0, phi0, s0 = target
    I0 = np.atleast_1d(np.asarray(I0, dtype=float))
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    if I0.shape != (system.d,) or phi0.shape != (system.d,):
        raise InputError("target I and phi must have the rotor dimension")
    return I0, phi0, float(s0)


# -- stage 1: create a critical point -------------------------------------------------


@dataclass
class Stage1:
    skipped: bool
    reason: str = ""
    functions: list = field(default_factory=list)
    A1: list = field(default_factory=list)
    A2: list = field(default_factory=list)
    C: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    b: list = field(default_factory=list)
    delta2: float = 0.0
    tau_star: list = field(default_factory=list)
    grad_before: list = field(default_factory=list)
    grad_residual: float = 0.0
    hess_det: float = 0.0
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec, repr=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "perturbation"}
        out["modes"] = _mode_dicts(self.perturbation)
        return out


def _gradient_search(mk: Melnikov, I, phi, s, threshold, settings, seed=0):
    """A tau with ||dL/dtau|| < threshold, searching shells of up to SEARCH_PERIODS periods."""
    n = mk.n
    if mk.trivial:
        return np.zeros(n), 0.0
    periods = _tau_periods(mk, I)
    rng = np.random.default_rng(seed)
    best_tau, best_norm = None, np.inf

    def grad(tau):
        return mk.evaluate(tau, I, phi, s, settings.quad_tol).grad_tau

    def jac(tau):
        return mk.evaluate(tau, I, phi, s, settings.quad_tol).hess_tau

    for shell in range(1, SEARCH_PERIODS + 1):
        half = shell * periods
        pts = (rng.random((SEARCH_SAMPLES * n, n)) * 2 - 1) * half
        if shell == 1:
            pts = np.vstack([np.zeros((1, n)), pts])
        norms = []
        for tau in pts:
            try:
                norms.append(np.linalg.norm(grad(tau)))
            except AccuracyError:
                norms.append(np.inf)
        order = np.argsort(norms, kind="stable")[:4]
        for j in order:
            tau = pts[j]
            if norms[j] < best_norm:
                best_tau, best_norm = tau, norms[j]
            if norms[j] < threshold:
                return tau, norms[j]
            try:
                sol = least_squares(grad, tau, jac=jac, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=60)
            except AccuracyError:
                continue
            g = float(np.linalg.norm(grad(sol.x)))
            if g < best_norm:
                best_tau, best_norm = sol.x, g
            if g < threshold:
                return sol.x, g
    raise SearchFailure(
        f"no tau with ||dL/dtau|| below {threshold:.3e} within {SEARCH_PERIODS} periods", best_norm=float(best_norm)
    )


def repair_h3a_stage1(
    system: SystemSpec,
    orbits,
    target,
    delta_budget: float,
    settings: Settings = Settings(),
    seed: int = 0,
) -> Stage1:
    """Build delta2 * sum_i f_i(q_i) cos(t + b_i) so that tau -> L has a critical point.

    The stage is skipped when a nondegenerate critical point already exists.  delta2
    is chosen so that the added modes have amplitude sum below delta_budget / 2.
    """
    _check_budget(delta_budget)
    I0, phi0, s0 = _check_target(system, target)
    n, d = system.n, system.d
    mk = Melnikov(system, orbits, settings.quad_tol)
    good, bad = find_critical_points(system, orbits, I0, phi0, s0, settings=settings, mk=mk)
    if good:
        return Stage1(skipped=True, reason="nondegenerate critical point already present",
                      tau_star=good[0].tau_star.tolist(), hess_det=good[0].hess_det)

    funcs, A1, A2 = [], [], []
    for orbit in orbits:
        f, a1, a2 = choose_basis(orbit, 1.0, settings.quad_tol)
        funcs.append(f)
        A1.append(a1)
        A2.append(a2)
    A1, A2 = np.array(A1), np.array(A2)
    C = np.hypot(A1, A2)
    alpha = np.arctan2(A2, A1)
    per_unit = sum(f.amplitude_sum for f in funcs)
    delta2 = DELTA_SAFETY * 0.5 * delta_budget / per_unit
    threshold = float(np.min(delta2 * C))

    if bad:
        start = min(bad, key=lambda cp: cp.grad_norm)
        tau, gn = start.tau_star, start.grad_norm
        if gn >= threshold:
            tau, gn = _gradient_search(mk, I0, phi0, s0, threshold, settings, seed)
    else:
        tau, gn = _gradient_search(mk, I0, phi0, s0, threshold, settings, seed)
    ev = mk.evaluate(tau, I0, phi0, s0, settings.quad_tol) if not mk.trivial else None
    g = np.zeros(n) if ev is None else ev.grad_tau
    H = np.zeros((n, n)) if ev is None else ev.hess_tau

    # x_i = g_i + delta2 C_i sin(psi_i) = 0 with psi_i = s0 - tau_i + b_i + alpha_i
    r = np.clip(-g / (delta2 * C), -1.0, 1.0)
    roots = [(np.arcsin(ri), np.pi - np.arcsin(ri)) for ri in r]
    best_psi, best_det = None, -1.0
    for combo in itertools.product(*roots) if n <= 10 else [tuple(rt[0] for rt in roots)]:
        psi = np.array(combo)
        det = abs(float(np.linalg.det(H + np.diag(-delta2 * C * np.cos(psi)))))
        if det > best_det + 1e-14:
            best_psi, best_det = psi, det
    b = best_psi - s0 + tau - alpha
    pert = _time_modes(funcs, b, delta2, n, d)

    repaired = system.with_perturbation(pert)
    mk2 = Melnikov(repaired, orbits, settings.quad_tol)
    ev2 = mk2.evaluate(tau, I0, phi0, s0, settings.quad_tol)
    return Stage1(
        skipped=False,
        reason="no nondegenerate critical point at the target",
        functions=[describe(f) for f in funcs],
        A1=A1.tolist(),
        A2=A2.tolist(),
        C=C.tolist(),
        alpha=alpha.tolist(),
        b=[float(v) % (2 * np.pi) for v in b],
        delta2=float(delta2),
        tau_star=np.asarray(tau, dtype=float).tolist(),
        grad_before=np.asarray(g, dtype=float).tolist(),
        grad_residual=float(np.linalg.norm(ev2.grad_tau)),
        hess_det=float(np.linalg.det(ev2.hess_tau)),
        perturbation=pert,
    )


# -- stage 2: make the Hessian invertible ---------------------------------------------


def poly_coefficients(fn, degree: int) -> np.ndarray:
    """Monomial coefficients (lowest first) of a polynomial from its values at 0..degree.

    Uses Newton forward differences, so the top coefficient is Delta^n fn(0) / n!.
    """
    xs = np.arange(degree + 1, dtype=float)
    vals = np.array([fn(x) for x in xs])
    table = [vals]
    for _ in range(degree):
        table.append(np.diff(table[-1]))
    coeffs = np.zeros(degree + 1)
    # sum_k Delta^k f(0) * binom(x, k), expanded into monomials
    basis = np.array([1.0])
    for k in range(degree + 1):
        if k > 0:
            basis = np.convolve(basis, np.array([-(k - 1), 1.0])) / k
        coeffs[: basis.size] += table[k][0] * basis
    return coeffs


@dataclass
class Stage2:
    applied: bool
    reason: str = ""
    functions: list = field(default_factory=list)
    B1: list = field(default_factory=list)
    B2: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    c: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    phase_alignment: list = field(default_factory=list)
    delta3: float = 0.0
    v_value: float = 0.0
    v_coefficients: list = field(default_factory=list)
    leading_coefficient: float = 0.0
    prod_lambda: float = 0.0
    hess_det_before: float = 0.0
    hess_det_after: float = 0.0
    tau_star: list = field(default_factory=list)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec, repr=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "perturbation"}
        out["modes"] = _mode_dicts(self.perturbation)
        return out


def repair_h3a_stage2(
    system: SystemSpec,
    orbits,
    target,
    delta_budget: float,
    tau_star,
    settings: Settings = Settings(),
    force_analysis: bool = False,
) -> Stage2:
    """Build delta3 * sum_i g_i(q_i) cos(t + c_i) making the Hessian at tau* invertible.

    ``system`` already contains the stage 1 addition.  When the Hessian is already
    nondegenerate the stage is not applied; with ``force_analysis`` the construction
    is still carried out and recorded, with delta3 = 0.
    """
    _check_budget(delta_budget)
    I0, phi0, s0 = _check_target(system, target)
    n, d = system.n, system.d
    tau_star = np.atleast_1d(np.asarray(tau_star, dtype=float))
    mk = Melnikov(system, orbits, settings.quad_tol)
    if mk.trivial:
        H = np.zeros((n, n))
    else:
        H = mk.evaluate(tau_star, I0, phi0, s0, settings.quad_tol).hess_tau
    det0 = float(np.linalg.det(H))
    degenerate = abs(det0) <= settings.nondegen_tol
    if not degenerate and not force_analysis:
        return Stage2(applied=False, reason="Hessian already nondegenerate", hess_det_before=det0,
                      hess_det_after=det0, tau_star=tau_star.tolist())

    funcs, B1, B2 = [], [], []
    for orbit in orbits:
        f, b1, b2 = choose_basis(orbit, 1.0, settings.quad_tol)
        funcs.append(f)
        B1.append(b1)
        B2.append(b2)
    B1, B2 = np.array(B1), np.array(B2)
    D = np.hypot(B1, B2)
    beta = np.arctan2(B2, B1)
    c = -s0 + tau_star - beta
    phase_alignment = np.cos(s0 - tau_star + c + beta)
    lam = -D * phase_alignment

    def v(delta):
        return float(np.linalg.det(H + delta * np.diag(lam)))

    coeffs = poly_coefficients(v, n)
    per_unit = sum(f.amplitude_sum for f in funcs)
    start = 0.5 * delta_budget / per_unit
    delta3, vval = 0.0, det0
    if degenerate:
        for k in range(DELTA3_CANDIDATES):
            cand = start * 2.0**-k
            val = v(cand)
            if abs(val) > settings.nondegen_tol:
                delta3, vval = cand, val
                break
        else:
            raise NumericalFailure("no delta3 among the candidates makes the Hessian determinant nonzero")
    pert = _time_modes(funcs, c, delta3, n, d) if delta3 > 0 else PerturbationSpec()
    det_after = det0
    if delta3 > 0:
        mk2 = Melnikov(system.with_perturbation(pert), orbits, settings.quad_tol)
        det_after = float(np.linalg.det(mk2.evaluate(tau_star, I0, phi0, s0, settings.quad_tol).hess_tau))
    return Stage2(
        applied=bool(delta3 > 0),
        reason="Hessian degenerate at tau*" if degenerate else "analysis only: Hessian already nondegenerate",
        functions=[describe(f) for f in funcs],
        B1=B1.tolist(),
        B2=B2.tolist(),
        beta=beta.tolist(),
        c=[float(v_) for v_ in c],
        lambdas=lam.tolist(),
        phase_alignment=phase_alignment.tolist(),
        delta3=float(delta3),
        v_value=float(vval),
        v_coefficients=coeffs.tolist(),
        leading_coefficient=float(coeffs[-1]),
        prod_lambda=float(np.prod(lam)),
        hess_det_before=det0,
        hess_det_after=det_after,
        tau_star=tau_star.tolist(),
        perturbation=pert,
    )


# -- H3b: tilt the reduced function ---------------------------------------------------


@dataclass
class H3bStage:
    skipped: bool
    reason: str = ""
    function: str = ""
    frequencies: list = field(default_factory=list)
    A: list = field(default_factory=list)
    B: list = field(default_factory=list)
    C: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    c: list = field(default_factory=list)
    delta: float = 0.0
    grad_theta_before: list = field(default_factory=list)
    grad_theta_after: list = field(default_factory=list)
    predicted_grad_theta: list = field(default_factory=list)
    tau_star: list = field(default_factory=list)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec, repr=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "perturbation"}
        out["modes"] = _mode_dicts(self.perturbation)
        return out


def _reduced_at(mk, tau_hint, I, theta, settings):
    cp, ok = newton(mk, tau_hint, I, theta, 0.0, settings)
    if not ok or not cp.nondegenerate(settings.nondegen_tol):
        return None, None
    return cp, mk.evaluate(cp.tau_star, I, theta, 0.0, settings.quad_tol, want_hess=False)


def h3b_coefficients(orbit: HomoclinicOrbit, F: FourierFunction, omega, tau1: float, tol: float = 1e-12):
    """(A_i, B_i) of the tilt term for each rotor frequency, at delay tau1."""
    A, B = [], []
    for w in omega:
        T1, T2 = _pair(orbit, F, w, tol)
        A.append(T1 * np.cos(w * tau1) + T2 * np.sin(w * tau1))
        B.append(T2 * np.cos(w * tau1) - T1 * np.sin(w * tau1))
    return np.array(A), np.array(B)


def repair_h3b(
    system: SystemSpec,
    orbits,
    branch,
    target,
    delta_budget: float,
    settings: Settings | None = None,
    h3b_tol: float = 1e-4,
    max_halvings: int = 12,
) -> H3bStage:
    """Build delta * F(q_1) sum_i cos(phi_i + c_i) so that dL*/dtheta(I^, theta^) != 0.

    ``target`` is (I^, theta^) in the s = 0 gauge.  delta starts just under the budget
    and is halved until the recomputed gradient is at least delta C_1 / 2.
    """
    _check_budget(delta_budget)
    settings = settings or branch.settings
    I_hat, theta_hat = target
    I_hat = np.atleast_1d(np.asarray(I_hat, dtype=float))
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if I_hat.shape != (system.d,) or theta_hat.shape != (system.d,):
        raise InputError("target I and theta must have the rotor dimension")
    d = system.d
    n = system.n
    mk = Melnikov(system, orbits, settings.quad_tol)
    phi_hint = theta_hat
    idx = branch.nearest_node(I_hat, phi_hint, 0.0)
    if idx is None:
        raise RepairFailure("branch has no certified nodes")
    _, _, s_node = branch.node_params(idx)
    cp, ev = _reduced_at(mk, branch.grid[idx].tau_star - s_node, I_hat, theta_hat, settings)
    if cp is None:
        raise RepairFailure("no nondegenerate critical point at the H3b target")
    before = np.asarray(ev.grad_phi, dtype=float)
    if np.max(np.abs(before)) > h3b_tol:
        return H3bStage(skipped=True, reason="target already passes", grad_theta_before=before.tolist(),
                        grad_theta_after=before.tolist(), tau_star=cp.tau_star.tolist())

    omega = system.omega(I_hat)
    tau1 = float(cp.tau_star[0])
    chosen = None
    for F in basis_functions():
        A, B = h3b_coefficients(orbits[0], F, omega, tau1, settings.quad_tol)
        if np.hypot(A[0], B[0]) > ZERO_TOL:
            chosen = F
            break
    if chosen is None:
        raise RepairFailure(f"transform of every basis function vanishes at frequency {omega[0]:g}")
    C = np.hypot(A, B)
    alpha = np.where(C > 0, np.arctan2(B, A), 0.0)
    c = -theta_hat - alpha
    c[0] += np.pi / 2

    delta = DELTA_SAFETY * delta_budget / (d * chosen.amplitude_sum)
    for _ in range(max_halvings + 1):
        pert = PerturbationSpec()
        for i in range(d):
            l = tuple(1 if j == i else 0 for j in range(d))
            pert = pert + product_modes(chosen, 0, n, l, 0, c[i], delta)
        mk2 = Melnikov(system.with_perturbation(pert), orbits, settings.quad_tol)
        cp2, ev2 = _reduced_at(mk2, cp.tau_star, I_hat, theta_hat, settings)
        if cp2 is not None and np.max(np.abs(cp2.tau_star - cp.tau_star)) < 1.0:
            after = np.asarray(ev2.grad_phi, dtype=float)
            if np.linalg.norm(after) >= 0.5 * delta * C[0]:
                predicted = before.copy()
                predicted[0] -= delta * C[0]
                return H3bStage(
                    skipped=False,
                    reason="dL*/dtheta vanished at the target",
                    function=describe(chosen),
                    frequencies=omega.tolist(),
                    A=A.tolist(),
                    B=B.tolist(),
                    C=C.tolist(),
                    alpha=alpha.tolist(),
                    c=[float(v) % (2 * np.pi) for v in c],
                    delta=float(delta),
                    grad_theta_before=before.tolist(),
                    grad_theta_after=after.tolist(),
                    predicted_grad_theta=predicted.tolist(),
                    tau_star=cp2.tau_star.tolist(),
                    perturbation=pert,
                )
        delta *= 0.5
    raise RepairFailure("first-order tilt never dominated the recomputed gradient")


# -- certificate ----------------------------------------------------------------------


@dataclass
class RepairCertificate:
    status: str  # "no-op" | "repaired"
    budget: float
    target: dict
    stage1: Stage1 | None = None
    stage2: Stage2 | None = None
    h3b_stage: H3bStage | None = None
    added_amplitude_sum: float = 0.0
    post_verification: dict = field(default_factory=dict)
    repaired: SystemSpec | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "status": self.status,
            "budget": self.budget,
            "target": self.target,
            "stage1": None if self.stage1 is None else self.stage1.to_dict(),
            "stage2": None if self.stage2 is None else self.stage2.to_dict(),
            "h3b_stage": None if self.h3b_stage is None else self.h3b_stage.to_dict(),
            "added_amplitude_sum": self.added_amplitude_sum,
            "post_verification": self.post_verification,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), sort_keys=True, indent=2)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def repair_system(
    system: SystemSpec,
    target,
    delta_budget: float,
    config=None,
    require_h3b: bool = True,
    orbits=None,
) -> RepairCertificate:
    """Verify, repair what fails, and re-verify; the budget bounds the added amplitude sum.

    Half the budget goes to the two H3a stages and the rest to the H3b tilt.
    """
    from .pipeline import Target, VerifyConfig, verify_system

    _check_budget(delta_budget)
    config = config or VerifyConfig()
    settings = config.settings
    I0, phi0, s0 = _check_target(system, target)
    tgt = Target(I0, phi0, s0)
    orbits = orbits or [compute_separatrix(pd) for pd in system.pendulums]
    target_dict = {"I0": I0.tolist(), "phi0": phi0.tolist(), "s0": s0}

    first = verify_system(system, tgt, config, orbits)
    if first.h3a["pass"] and (first.h3b["pass"] or not require_h3b):
        return RepairCertificate("no-op", delta_budget, target_dict, post_verification=first.to_dict(), repaired=system)

    current = system
    stage1 = stage2 = None
    if not first.h3a["pass"]:
        stage1 = repair_h3a_stage1(current, orbits, (I0, phi0, s0), 0.5 * delta_budget, settings)
        if not stage1.skipped:
            current = current.with_perturbation(stage1.perturbation)
            stage2 = repair_h3a_stage2(
                current, orbits, (I0, phi0, s0), 0.5 * delta_budget, stage1.tau_star, settings, force_analysis=True
            )
            current = current.with_perturbation(stage2.perturbation)
        mid = verify_system(current, tgt, config, orbits)
        if not mid.h3a["pass"]:
            raise RepairFailure(f"H3a still fails after repair: {mid.h3a['reason']}")
    else:
        mid = first

    h3b_stage = None
    if require_h3b and not mid.h3b["pass"]:
        used = current.perturbation.amplitude_sum - system.perturbation.amplitude_sum
        remaining = delta_budget - used
        if remaining <= 0:
            raise RepairFailure("budget exhausted before the H3b stage")
        theta_hat = tgt.theta_at(current)
        share = 0.5 * remaining
        last = None
        for _ in range(8):
            h3b_stage = repair_h3b(current, orbits, mid.branch, (I0, theta_hat), share, settings, config.h3b_tol)
            candidate = current.with_perturbation(h3b_stage.perturbation)
            last = verify_system(candidate, tgt, config, orbits)
            if last.passed:
                current = candidate
                mid = last
                break
            share *= 0.5
        else:
            raise RepairFailure(f"post-verification failed after the H3b stage: {last.to_dict()}")

    added = current.perturbation.amplitude_sum - system.perturbation.amplitude_sum
    if added >= delta_budget:
        raise RepairFailure(f"added amplitude {added:.3e} exceeds the budget {delta_budget:.3e}")
    post = mid.to_dict()
    if not require_h3b:
        post["H3b_required"] = False
    return RepairCertificate("repaired", delta_budget, target_dict, stage1, stage2, h3b_stage, float(added), post, current)
