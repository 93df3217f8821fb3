"""Command-line front end.

Exit codes: 0 pass, 1 a hypothesis fails, 2 usage or input error, 3 numerical failure.
Every JSON report carries a "schema" field and is written with sorted keys, so two
runs with the same arguments produce identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_model, save_model
from .criticality import Box, Settings, write_branch_csv
from .dynamics import integrate_full, measure_homoclinic_jump
from .effective import integrate_effective, shadow_scaling
from .errors import DiffusionError, DomainExit, InputError, NumericalFailure
from .homoclinic import compute_separatrix, dump_orbit_csv
from .melnikov import scan_grid, write_scan_csv
from .pipeline import Target, VerifyConfig, verify_system
from .reduced import ScatteringState, reduced_eval
from .repair import repair_system

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

VERDICT_SCHEMA = "apriori-diffusion/verdict/1"
SCAN_SCHEMA = "apriori-diffusion/scan/1"
SEPARATRIX_SCHEMA = "apriori-diffusion/separatrix/1"
JUMP_SCHEMA = "apriori-diffusion/jump/1"


class UsageError(InputError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _dump(payload: dict) -> str:
    return json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


# -- argument plumbing ------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("model", help="model configuration file (TOML)")
    p.add_argument("--out", default=".", help="directory for reports (default: current)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="seed for sampling-based checks")
    p.add_argument("--quad-tol", type=_positive, default=1e-12)
    p.add_argument("--newton-tol", type=_positive, default=1e-10)
    p.add_argument("--nondegen-tol", type=_positive, default=1e-6)
    p.add_argument("--h3b-tol", type=_positive, default=1e-4)
    p.add_argument("--ode-tol", type=_positive, default=1e-10)


def _target_args(p: argparse.ArgumentParser):
    p.add_argument("--I0", type=_floats, default=None, help="target actions (default: all ones)")
    p.add_argument("--phi0", type=_floats, default=None, help="target angles (default: zeros)")
    p.add_argument("--s0", type=float, default=0.0)


def _box_args(p: argparse.ArgumentParser):
    p.add_argument("--I-center", type=_floats, default=None, help="box centre in I (default: target)")
    p.add_argument("--phi-center", type=_floats, default=None, help="box centre in phi (default: target)")
    p.add_argument("--s-center", type=float, default=None)
    p.add_argument("--I-half", type=_positive, default=0.2)
    p.add_argument("--angle-half", type=_positive, default=0.5)
    p.add_argument("--s-half", type=_positive, default=None, help="default: --angle-half")
    p.add_argument("--grid-steps", type=_ints, default=[5], help="nodes per box axis, one value or one per axis")
    p.add_argument("--seeds", type=int, default=8, help="Newton seeds per tau period")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apriori-diffusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="check both nondegeneracy hypotheses at a target")
    _common(p), _target_args(p), _box_args(p)

    p = sub.add_parser("repair", help="add small perturbations restoring the hypotheses")
    _common(p), _target_args(p), _box_args(p)
    p.add_argument("--budget", type=float, required=True, help="bound on the added amplitude sum")
    p.add_argument("--skip-h3b", action="store_true", help="only repair the critical-point hypothesis")

    p = sub.add_parser("scan", help="tabulate the Melnikov potential on a (tau, s) grid")
    _common(p), _target_args(p)
    p.add_argument("--tau-range", type=_floats, default=[-np.pi, np.pi])
    p.add_argument("--tau-points", type=int, default=32)
    p.add_argument("--s-range", type=_floats, default=None, help="default: the single value --s0")
    p.add_argument("--s-points", type=int, default=1)

    p = sub.add_parser("shadow", help="pseudo-orbit versus effective-flow scaling study")
    _common(p), _target_args(p), _box_args(p)
    p.add_argument("--eps", type=_floats, default=[1e-2, 5e-3, 2.5e-3])
    p.add_argument("--t-end", type=_positive, default=1.0)
    p.add_argument("--x0-I", type=_floats, default=None, help="start action (default: target)")
    p.add_argument("--x0-theta", type=_floats, default=None, help="start angle (default: target, gauge s = 0)")

    p = sub.add_parser("diffuse", help="integrate the full system")
    _common(p), _target_args(p), _box_args(p)
    p.add_argument("--epsilon", type=float, default=None, help="default: the model's epsilon")
    p.add_argument("--t-end", type=_positive, default=100.0)
    p.add_argument("--initial", type=_floats, default=None, help="p..., q..., I..., phi... (default: near the saddle)")
    p.add_argument("--method", choices=("dop853", "symplectic"), default="dop853")
    p.add_argument("--dt", type=_positive, default=0.01)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--jump", action="store_true", help="also measure one homoclinic excursion at the target")

    p = sub.add_parser("separatrix", help="tabulate the homoclinic orbit of each pendulum")
    _common(p)
    p.add_argument("--t-span", type=_positive, default=None)
    return parser


def _settings(a) -> Settings:
    return Settings(newton_tol=a.newton_tol, nondegen_tol=a.nondegen_tol, quad_tol=a.quad_tol)


def _target(system, a) -> Target:
    for name in ("I0", "phi0"):
        v = getattr(a, name)
        if v is not None and len(v) not in (1, system.d):
            raise UsageError(f"--{name} needs 1 or {system.d} values")
    return Target.of(system, a.I0, a.phi0, a.s0)


def _verify_config(system, target: Target, a) -> VerifyConfig:
    if a.workers < 1:
        raise UsageError("--workers must be at least 1")
    if a.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    steps = a.grid_steps
    if not steps or any(s < 1 for s in steps):
        raise UsageError("--grid-steps values must be at least 1")
    naxes = 2 * system.d + 1
    if len(steps) not in (1, naxes):
        raise UsageError(f"--grid-steps needs 1 or {naxes} values")
    grid = steps[0] if len(steps) == 1 else tuple(steps)
    box = None
    if a.I_center is not None or a.phi_center is not None or a.s_center is not None or a.s_half is not None:
        d = system.d
        Ic = np.broadcast_to(np.asarray(a.I_center if a.I_center is not None else target.I0, dtype=float), (d,))
        pc = np.broadcast_to(np.asarray(a.phi_center if a.phi_center is not None else target.phi0, dtype=float), (d,))
        box = Box(
            Ic.copy(),
            pc.copy(),
            target.s0 if a.s_center is None else float(a.s_center),
            np.full(d, a.I_half),
            np.full(d, a.angle_half),
            a.angle_half if a.s_half is None else float(a.s_half),
        )
    return VerifyConfig(
        I_half=a.I_half,
        angle_half=a.angle_half,
        grid_steps=grid,
        seeds_per_dim=a.seeds,
        settings=_settings(a),
        h3b_tol=a.h3b_tol,
        workers=a.workers,
        box=box,
    )


def _verdict_lines(result) -> list[str]:
    return [
        f"H3a: {'pass' if result.h3a['pass'] else 'FAIL'} ({result.h3a['reason']})",
        f"H3b: {'pass' if result.h3b['pass'] else 'FAIL'} ({result.h3b['reason']})",
    ]


# -- commands ---------------------------------------------------------------------------


def cmd_verify(a) -> int:
    system = load_model(a.model)
    target = _target(system, a)
    config = _verify_config(system, target, a)
    result = verify_system(system, target, config)
    out = Path(a.out)
    payload = {"schema": VERDICT_SCHEMA, "model": Path(a.model).name, **result.to_dict()}
    _write(out, "verdict.json", _dump(payload))
    if result.branch is not None:
        write_branch_csv(result.branch, out / "branch.csv")
    for line in _verdict_lines(result):
        print(line)
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_repair(a) -> int:
    if not (np.isfinite(a.budget) and a.budget > 0):
        raise UsageError("--budget must be positive")
    system = load_model(a.model)
    target = _target(system, a)
    config = _verify_config(system, target, a)
    cert = repair_system(system, (target.I0, target.phi0, target.s0), a.budget, config, not a.skip_h3b)
    out = Path(a.out)
    _write(out, "certificate.json", cert.to_json() + "\n")
    save_model(cert.repaired, out / "repaired.toml")
    print(f"repair: {cert.status}, added amplitude {cert.added_amplitude_sum:.6g} of budget {a.budget:g}")
    return EXIT_PASS


def cmd_scan(a) -> int:
    if a.tau_points < 1 or a.s_points < 1:
        raise UsageError("scan needs at least one grid point along each axis")
    if len(a.tau_range) != 2:
        raise UsageError("--tau-range takes two values")
    system = load_model(a.model)
    target = _target(system, a)
    s_range = a.s_range if a.s_range is not None else [target.s0, target.s0]
    if len(s_range) != 2:
        raise UsageError("--s-range takes two values")
    n, d = system.n, system.d
    orbits = [compute_separatrix(pd) for pd in system.pendulums]
    taus = np.linspace(a.tau_range[0], a.tau_range[1], a.tau_points)
    ss = np.linspace(s_range[0], s_range[1], a.s_points)
    points = []
    for s in ss:
        for idx in np.ndindex(*(a.tau_points,) * n):
            points.append((taus[list(idx)], target.I0, target.phi0, float(s)))
    rows = scan_grid(system, orbits, points, a.quad_tol, a.workers)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scan_csv(rows, out / "scan.csv", n, d)
    values = np.array([r["L"] for r in rows])
    payload = {
        "schema": SCAN_SCHEMA,
        "points": len(rows),
        "min": float(values.min()),
        "max": float(values.max()),
        "I0": target.I0,
        "phi0": target.phi0,
    }
    _write(out, "scan.json", _dump(payload))
    print(f"scan: {len(rows)} points, L in [{values.min():.6g}, {values.max():.6g}]")
    return EXIT_PASS


def _branch_or_fail(system, target, a):
    config = _verify_config(system, target, a)
    result = verify_system(system, target, config)
    if not result.h3a["pass"]:
        for line in _verdict_lines(result):
            print(line)
        return None
    return result.branch


def cmd_shadow(a) -> int:
    if any(not e > 0 for e in a.eps) or len(a.eps) < 2:
        raise UsageError("--eps needs at least two positive values")
    system = load_model(a.model)
    target = _target(system, a)
    branch = _branch_or_fail(system, target, a)
    if branch is None:
        return EXIT_FAIL
    d = system.d
    I = np.broadcast_to(np.asarray(a.x0_I if a.x0_I is not None else target.I0, dtype=float), (d,))
    th = a.x0_theta if a.x0_theta is not None else target.theta_at(system)
    th = np.broadcast_to(np.asarray(th, dtype=float), (d,))
    x0 = ScatteringState.of(I, th)
    report = shadow_scaling(branch, x0, a.eps, a.t_end, min(a.ode_tol, 1e-10), a.workers)
    out = Path(a.out)
    _write(out, "shadow.json", report.to_json() + "\n")
    curve = integrate_effective(branch, x0, a.t_end, a.ode_tol)
    curve.write_csv(out / "effective.csv")
    print(f"shadow: slope {report.slope:.4f}, R^2 {report.fit_quality:.5f}, K {report.fitted_K:.4g}")
    return EXIT_PASS


def cmd_diffuse(a) -> int:
    system = load_model(a.model)
    eps = system.epsilon if a.epsilon is None else a.epsilon
    if eps == 0:
        raise UsageError("diffuse needs a nonzero epsilon")
    if a.stride < 1:
        raise UsageError("--stride must be at least 1")
    target = _target(system, a)
    n, d = system.n, system.d
    if a.initial is None:
        initial = (np.full(n, 1e-3), np.full(n, 1e-3), target.I0, target.phi0, 0.0)
    else:
        if len(a.initial) != 2 * n + 2 * d:
            raise UsageError(f"--initial needs {2 * n + 2 * d} values")
        v = np.asarray(a.initial)
        initial = (v[:n], v[n : 2 * n], v[2 * n : 2 * n + d], v[2 * n + d :], 0.0)
    rec = integrate_full(system, initial, a.t_end, a.ode_tol, eps, a.stride, a.method, a.dt)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    rec.write_csv(out / "trajectory.csv")
    _write(out, "drift.json", rec.summary_json() + "\n")
    print(f"diffuse: action drift {rec.drift:.6g}, energy drift {rec.energy_drift:.3g}")
    if a.jump:
        branch = _branch_or_fail(system, target, a)
        if branch is None:
            return EXIT_FAIL
        theta = target.theta_at(system)
        res = measure_homoclinic_jump(system, eps, branch, (target.I0, theta), min(a.ode_tol, 1e-11), full=True)
        pred = eps * reduced_eval(branch, target.I0, theta).grad_theta
        payload = {
            "schema": JUMP_SCHEMA,
            "epsilon": eps,
            "delta_I": res.delta_I,
            "predicted": pred,
            "raw_delta_I": res.raw_delta_I,
            "t_return": res.t_return,
        }
        _write(out, "jump.json", _dump(payload))
        print(f"jump: measured {np.round(res.delta_I, 12).tolist()}, first-order {np.round(pred, 12).tolist()}")
    return EXIT_PASS


def cmd_separatrix(a) -> int:
    system = load_model(a.model)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, pd in enumerate(system.pendulums):
        orbit = compute_separatrix(pd, a.t_span)
        dump_orbit_csv(orbit, out / f"separatrix_{i + 1}.csv")
        rows.append(
            {
                "index": i + 1,
                "lambda": orbit.lam,
                "t_span": orbit.t_span,
                "max_energy_error": orbit.max_energy_error,
                "tail_coeff": [orbit.tail_coeff_left, orbit.tail_coeff_right],
                "samples": int(orbit.samples[0].size),
            }
        )
    _write(out, "separatrix.json", _dump({"schema": SEPARATRIX_SCHEMA, "pendulums": rows}))
    for r in rows:
        print(f"separatrix {r['index']}: lambda {r['lambda']:.12g}, energy error {r['max_energy_error']:.2e}")
    return EXIT_PASS


COMMANDS = {
    "verify": cmd_verify,
    "repair": cmd_repair,
    "scan": cmd_scan,
    "shadow": cmd_shadow,
    "diffuse": cmd_diffuse,
    "separatrix": cmd_separatrix,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, DomainExit) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DiffusionError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
