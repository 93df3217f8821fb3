"""Acceptance criteria, one PASS/FAIL line each.

The lines are written straight to the terminal so they show up in a plain
``pytest -v`` run; each test then asserts the same condition.
"""
import json
import time

import numpy as np
import pytest

from apriori_diffusion import cli
from apriori_diffusion.criticality import Box, continue_branch, find_critical_points, h3a_report
from apriori_diffusion.dynamics import integrate_full, measure_homoclinic_jump
from apriori_diffusion.effective import integrate_effective, shadow_scaling
from apriori_diffusion.homoclinic import compute_separatrix, orbit_value
from apriori_diffusion.melnikov import Melnikov, check_shift_identity
from apriori_diffusion.model import standard_pendulum
from apriori_diffusion.reduced import ScatteringState, in_domain, reduced_eval

from conftest import MODELS, sech_transform, two_harmonic_reduced

A1_ORACLE = sech_transform(1.0)


@pytest.fixture
def verdict(request):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number, title, ok, detail):
        line = f"[acceptance {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


def test_1_separatrix_oracle(verdict):
    start = time.perf_counter()
    orbit = compute_separatrix(standard_pendulum())
    elapsed = time.perf_counter() - start
    t = np.linspace(-10, 10, 4001)
    q, p = orbit_value(orbit, t)
    err = max(np.max(np.abs(q - 4 * np.arctan(np.exp(t)))), np.max(np.abs(p - 2 / np.cosh(t))))
    verdict(1, "separatrix oracle", err < 1e-8 and elapsed < 1.0, f"max error {err:.2e} (< 1e-8), {elapsed:.2f} s (< 1 s)")


def test_2_melnikov_oracle(verdict, cos_t_system, two_harmonic, orbit):
    start = time.perf_counter()
    closed = 2 * np.pi / np.sinh(np.pi / 2)
    mk = Melnikov(cos_t_system, [orbit])
    grid_err = 0.0
    for tau in np.linspace(-np.pi, np.pi, 10):
        for s in np.linspace(-np.pi, np.pi, 10):
            grid_err = max(grid_err, abs(mk.evaluate([tau], [1.0], [0.0], s).value - closed * np.cos(s - tau)))
    rng = np.random.default_rng(2024)
    mk2 = Melnikov(two_harmonic, [orbit])
    shift_err = 0.0
    for _ in range(100):
        tau, I, phi, s, sigma = rng.uniform(-3, 3), rng.uniform(0.2, 2), rng.uniform(0, 2 * np.pi), rng.uniform(-3, 3), rng.uniform(-2, 2)
        shift_err = max(shift_err, check_shift_identity(two_harmonic, mk2, [tau], [I], [phi], s, sigma))
    elapsed = time.perf_counter() - start
    amp_gap = abs(closed - A1_ORACLE)
    ok = grid_err < 1e-8 and shift_err < 1e-8 and elapsed < 10 and amp_gap < 1e-12
    verdict(
        2,
        "Melnikov oracle",
        ok,
        f"grid error {grid_err:.2e}, shift identity {shift_err:.2e} (< 1e-8), "
        f"amplitude {closed:.10f} vs mpmath {A1_ORACLE:.10f}, {elapsed:.1f} s (< 10 s)",
    )


def test_3_envelope_theorem(verdict, two_harmonic_branch):
    rng = np.random.default_rng(7)
    h = 1e-5
    worst, points = 0.0, 0
    while points < 100:
        I, theta = rng.uniform(0.82, 1.18), rng.uniform(1.1, 2.05)
        if not (in_domain(two_harmonic_branch, [I + h], [theta]) and in_domain(two_harmonic_branch, [I - h], [theta])
                and in_domain(two_harmonic_branch, [I], [theta + h]) and in_domain(two_harmonic_branch, [I], [theta - h])):
            continue
        ev = reduced_eval(two_harmonic_branch, [I], [theta])
        f = lambda a, b: reduced_eval(two_harmonic_branch, [a], [b], ev.tau_star).value
        dI = (f(I + h, theta) - f(I - h, theta)) / (2 * h)
        dth = (f(I, theta + h) - f(I, theta - h)) / (2 * h)
        worst = max(worst, abs(ev.grad_I[0] - dI), abs(ev.grad_theta[0] - dth))
        points += 1
    # one extra independent check of the envelope gradient against mpmath
    _, oI, oth = two_harmonic_reduced(1.0, np.pi / 2)
    centre = reduced_eval(two_harmonic_branch, [1.0], [np.pi / 2])
    oracle_err = max(abs(centre.grad_I[0] - oI), abs(centre.grad_theta[0] - oth))
    ok = worst < 1e-5 and oracle_err < 1e-8
    verdict(3, "envelope theorem", ok, f"max |envelope - difference| {worst:.2e} over {points} points (< 1e-5), "
            f"mpmath check {oracle_err:.1e}")


def test_4_h3a_pipeline(verdict, two_harmonic, orbit, tmp_path):
    good, _ = find_critical_points(two_harmonic, [orbit], [1.0], [np.pi / 2], 0.0)
    # default box: I +- 0.2, phi and s +- 0.5
    report = h3a_report(continue_branch(two_harmonic, [orbit], good[0], Box.around([1.0], [np.pi / 2], 0.0)))
    code = cli.main(["verify", str(MODELS / "unperturbed.toml"), "--out", str(tmp_path)])
    negative = json.loads((tmp_path / "verdict.json").read_text())["H3a"]
    ok = report["pass"] and report["min_abs_det"] > 1 and report["max_grad_norm"] < 1e-10 and code == 1 and not negative["pass"]
    verdict(4, "H3a pipeline", ok, f"min |det Hess| {report['min_abs_det']:.3f} (> 1), max |dL/dtau| "
            f"{report['max_grad_norm']:.1e} (< 1e-10) over {report['nodes']} nodes; H1 = 0 exit code {code} (1)")


def test_5_shadowing_scaling(verdict, two_harmonic, orbit):
    start = time.perf_counter()
    good, _ = find_critical_points(two_harmonic, [orbit], [1.0], [np.pi / 2], 0.0)
    box = Box(np.array([-0.25]), np.array([1.45]), 0.0, np.array([1.5]), np.array([0.35]), 0.25)
    branch = continue_branch(two_harmonic, [orbit], good[0], box, grid_steps=(31, 7, 3))
    report = shadow_scaling(branch, ScatteringState.of(1.0, np.pi / 2), [1e-2, 5e-3, 2.5e-3], t_end=1.0)
    elapsed = time.perf_counter() - start
    ok = abs(report.slope - 1) <= 0.2 and report.fit_quality > 0.95 and elapsed < 60 and all(report.complete)
    verdict(5, "shadowing scaling", ok, f"slope {report.slope:.4f} (1 +- 0.2), R^2 {report.fit_quality:.5f} (> 0.95), "
            f"K {report.fitted_K:.3f}, {elapsed:.1f} s (< 60 s)")


def test_6_homoclinic_jump(verdict, two_harmonic, two_harmonic_branch):
    start = time.perf_counter()
    theta = np.pi / 2
    predicted = reduced_eval(two_harmonic_branch, [1.0], [theta]).grad_theta[0]
    epsilons = np.array([1e-2, 5e-3, 2.5e-3])
    gaps = []
    for eps in epsilons:
        dI = measure_homoclinic_jump(two_harmonic, eps, two_harmonic_branch, ([1.0], [theta]))[0]
        gaps.append(abs(dI / eps - predicted))
    slope = float(np.polyfit(np.log(epsilons), np.log(gaps), 1)[0])
    elapsed = time.perf_counter() - start
    ok = abs(slope - 1) <= 0.2 and elapsed < 300
    gap_text = ", ".join(f"{g:.2e}" for g in gaps)
    verdict(6, "homoclinic jump", ok, f"|dI/eps - dL*/dtheta| = {gap_text}, slope {slope:.3f} (1 +- 0.2), {elapsed:.1f} s (< 300 s)")


def test_7_repair_end_to_end(verdict, tmp_path):
    out = tmp_path / "repair"
    code = cli.main(["repair", str(MODELS / "unperturbed.toml"), "--budget", "0.1", "--out", str(out)])
    cert = json.loads((out / "certificate.json").read_text())
    recheck = cli.main(["verify", str(out / "repaired.toml"), "--out", str(tmp_path / "verify")])
    post = json.loads((tmp_path / "verify" / "verdict.json").read_text())
    st2 = cert["stage2"]
    align_err = max(abs(c - 1) for c in st2["phase_alignment"])
    lead_err = abs(st2["leading_coefficient"] - st2["prod_lambda"])
    oracle_err = abs(st2["prod_lambda"] - (-A1_ORACLE))
    ok = (
        code == 0
        and recheck == 0
        and post["H3a"]["pass"]
        and post["H3b"]["pass"]
        and cert["added_amplitude_sum"] < 0.1
        and align_err < 1e-10
        and lead_err < 1e-8
        and oracle_err < 1e-8
    )
    verdict(7, "repair end to end", ok, f"added amplitude {cert['added_amplitude_sum']:.4f} (< 0.1), re-verify exit {recheck}, "
            f"phase alignment error {align_err:.1e} (< 1e-10), leading coefficient {st2['leading_coefficient']:.10f} vs "
            f"prod lambda {st2['prod_lambda']:.10f} vs -A(1) {-A1_ORACLE:.10f} (< 1e-8)")


def test_8_conservation(verdict, two_harmonic, wide_branch):
    tol = 1e-10
    rec = integrate_full(two_harmonic, ([0.8], [0.6], [1.0], [0.3], 0.0), 100.0, tol, epsilon=0.0)
    curve = integrate_effective(wide_branch, ScatteringState.of(1.0, np.pi / 2), 1.0, tol)
    action = float(np.max(rec.action_drift))
    energy = float(np.max(rec.pendulum_energy_drift))
    ok = rec.complete and curve.complete and action <= 100 * tol and energy <= 100 * tol and curve.max_drift <= 100 * tol
    verdict(8, "conservation", ok, f"eps = 0 action drift {action:.1e}, pendulum energy drift {energy:.1e}, "
            f"L* drift {curve.max_drift:.1e} (each <= {100 * tol:.0e})")
