import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apriori_diffusion.criticality import Box, Settings, continue_branch, find_critical_points
from apriori_diffusion.errors import InputError
from apriori_diffusion.melnikov import Melnikov
from apriori_diffusion.model import FourierFunction, PerturbationSpec, SystemSpec, product_modes, quadratic_rotor
from apriori_diffusion.pipeline import VerifyConfig
from apriori_diffusion.repair import (
    choose_basis,
    describe,
    h3b_coefficients,
    poly_coefficients,
    repair_h3a_stage1,
    repair_h3a_stage2,
    repair_h3b,
    repair_system,
)

from conftest import COS_MINUS_ONE, sech_transform, sin_transform

A1 = sech_transform(1.0)
TARGET = ([1.0], [0.0], 0.0)


def test_basis_transforms(orbit):
    f, a1, a2 = choose_basis(orbit, 1.0)
    assert describe(f) == "cos q"
    assert a1 == pytest.approx(A1, abs=1e-11) and a2 == pytest.approx(0.0, abs=1e-12)
    # the sine harmonic has only the odd transform
    A, B = h3b_coefficients(orbit, FourierFunction(((1, 0.0, 1.0),)), [1.0], 0.0)
    assert A[0] == pytest.approx(0.0, abs=1e-12)
    assert B[0] == pytest.approx(sin_transform(1.0), abs=1e-11)
    assert describe(FourierFunction(((2, 0.5, -1.0),))) == "0.5 cos 2q + -1 sin 2q"


def test_tilt_coefficients_rotate_with_delay(orbit):
    A, B = h3b_coefficients(orbit, FourierFunction(((1, 1.0, 0.0),)), [1.0], 0.7)
    assert A[0] == pytest.approx(A1 * np.cos(0.7), abs=1e-11)
    assert B[0] == pytest.approx(-A1 * np.sin(0.7), abs=1e-11)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=6))
@settings(max_examples=50)
def test_poly_coefficients_recovers_polynomial(coeffs):
    deg = len(coeffs) - 1
    fn = lambda x: sum(c * x**k for k, c in enumerate(coeffs))
    got = poly_coefficients(fn, deg)
    assert np.allclose(got, coeffs, atol=1e-9 * (1 + max(abs(c) for c in coeffs)) * 10**deg)


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=4), st.floats(-2, 2))
@settings(max_examples=30)
def test_leading_coefficient_of_shifted_determinant(lams, h):
    # det(H + x diag(lam)) has top coefficient prod(lam) for any H
    n = len(lams)
    H = np.full((n, n), h) + np.eye(n)
    coeffs = poly_coefficients(lambda x: np.linalg.det(H + x * np.diag(lams)), n)
    assert coeffs[-1] == pytest.approx(np.prod(lams), abs=1e-8 * (1 + abs(h)) ** n * 10**n)


def test_stage1_on_zero_perturbation(unperturbed, orbit):
    st1 = repair_h3a_stage1(unperturbed, [orbit], TARGET, 0.1)
    assert not st1.skipped
    assert st1.delta2 == pytest.approx(0.9 * 0.5 * 0.1)
    assert st1.C[0] == pytest.approx(A1, abs=1e-11)
    assert st1.grad_residual < 1e-10
    # with nothing else present the Hessian is -delta2 C cos(psi) with cos(psi) = +-1
    assert abs(st1.hess_det) == pytest.approx(st1.delta2 * A1, abs=1e-10)
    assert st1.perturbation.amplitude_sum < 0.05
    # re-verify from scratch with a fresh Melnikov evaluation
    mk = Melnikov(unperturbed.with_perturbation(st1.perturbation), [orbit])
    ev = mk.evaluate(st1.tau_star, [1.0], [0.0], 0.0)
    assert np.linalg.norm(ev.grad_tau) < 1e-10 and abs(np.linalg.det(ev.hess_tau)) > 1e-3


def test_stage1_on_angle_free_perturbation(pendulum, orbit):
    # H1 = cos q - 1: L is the constant 4 and every tau is degenerate
    system = SystemSpec(quadratic_rotor(1), (pendulum,), product_modes(COS_MINUS_ONE, 0, 1, (0,), 0))
    st1 = repair_h3a_stage1(system, [orbit], TARGET, 0.1, Settings())
    assert not st1.skipped
    mk = Melnikov(system.with_perturbation(st1.perturbation), [orbit])
    ev = mk.evaluate(st1.tau_star, [1.0], [0.0], 0.0)
    assert np.linalg.norm(ev.grad_tau) < 1e-10
    assert abs(np.linalg.det(ev.hess_tau)) > 1e-6


def test_stage1_skips_when_healthy(two_harmonic, orbit):
    st1 = repair_h3a_stage1(two_harmonic, [orbit], ([1.0], [np.pi / 2], 0.0), 0.1)
    assert st1.skipped and st1.perturbation.modes == ()


def test_stage2_analysis_single_pendulum(unperturbed, orbit):
    st1 = repair_h3a_stage1(unperturbed, [orbit], TARGET, 0.1)
    repaired = unperturbed.with_perturbation(st1.perturbation)
    st2 = repair_h3a_stage2(repaired, [orbit], TARGET, 0.1, st1.tau_star, force_analysis=True)
    assert not st2.applied and st2.delta3 == 0.0
    assert st2.phase_alignment[0] == pytest.approx(1.0, abs=1e-10)
    assert st2.lambdas[0] == pytest.approx(-A1, abs=1e-10)
    assert st2.leading_coefficient == pytest.approx(st2.prod_lambda, abs=1e-8)
    assert st2.leading_coefficient == pytest.approx(-A1, abs=1e-8)


def test_stage2_two_pendulums_with_zero_hessian(pendulum, orbit):
    system = SystemSpec(quadratic_rotor(1), (pendulum, pendulum), PerturbationSpec())
    st2 = repair_h3a_stage2(system, [orbit, orbit], TARGET, 0.1, [0.3, -0.2])
    assert st2.applied and st2.delta3 > 0
    assert np.allclose(st2.phase_alignment, 1.0, atol=1e-10)
    assert st2.leading_coefficient == pytest.approx(A1**2, abs=1e-8)
    assert st2.leading_coefficient == pytest.approx(st2.prod_lambda, abs=1e-8)
    # the Hessian of the added term is exactly delta3 diag(lambda)
    assert st2.hess_det_after == pytest.approx(st2.v_value, abs=1e-10)
    assert st2.perturbation.amplitude_sum <= 0.05


def test_budget_must_be_positive(unperturbed, orbit):
    with pytest.raises(InputError):
        repair_h3a_stage1(unperturbed, [orbit], TARGET, 0.0)
    with pytest.raises(InputError):
        repair_system(unperturbed, TARGET, -1.0, orbits=[orbit])
    with pytest.raises(InputError):
        repair_h3a_stage1(unperturbed, [orbit], ([1.0, 2.0], [0.0], 0.0), 0.1)


def _cos_t_branch(system, orbit, I):
    good, _ = find_critical_points(system, [orbit], [I], [0.0], 0.0)
    start = min(good, key=lambda cp: abs(cp.tau_star[0]))
    return continue_branch(system, [orbit], start, Box.around([I], [0.0], 0.0, 0.2, 0.25))


@pytest.mark.parametrize("I_hat, C_expected", [(1.0, A1), (0.0, 4.0)])
def test_h3b_tilt(cos_t_system, orbit, I_hat, C_expected):
    branch = _cos_t_branch(cos_t_system, orbit, I_hat)
    stage = repair_h3b(cos_t_system, [orbit], branch, ([I_hat], [0.0]), 0.1)
    assert not stage.skipped
    assert stage.C[0] == pytest.approx(C_expected, abs=1e-10)
    assert stage.grad_theta_before[0] == pytest.approx(0.0, abs=1e-10)
    # first order: dL*/dtheta = -delta C
    assert stage.grad_theta_after[0] == pytest.approx(stage.predicted_grad_theta[0], rel=0.05)
    assert stage.perturbation.amplitude_sum < 0.1


def test_h3b_skips_when_healthy(two_harmonic_branch, two_harmonic, orbit):
    stage = repair_h3b(two_harmonic, [orbit], two_harmonic_branch, ([1.0], [np.pi / 2]), 0.1)
    assert stage.skipped


def test_no_op_certificate(two_harmonic, orbit):
    cfg = VerifyConfig(grid_steps=3)
    cert = repair_system(two_harmonic, ([1.0], [np.pi / 2], 0.0), 0.1, cfg, orbits=[orbit])
    assert cert.status == "no-op" and cert.added_amplitude_sum == 0.0
    assert cert.repaired is two_harmonic


def test_certificate_is_deterministic(unperturbed, orbit):
    cfg = VerifyConfig(grid_steps=3)
    a = repair_system(unperturbed, TARGET, 0.1, cfg, orbits=[orbit])
    b = repair_system(unperturbed, TARGET, 0.1, cfg, orbits=[orbit])
    assert a.to_json() == b.to_json()
    payload = json.loads(a.to_json())
    assert payload["status"] == "repaired"
    assert payload["post_verification"]["pass"]
    assert payload["added_amplitude_sum"] < 0.1


def test_skip_h3b(unperturbed, orbit):
    cert = repair_system(unperturbed, TARGET, 0.1, VerifyConfig(grid_steps=3), require_h3b=False, orbits=[orbit])
    assert cert.h3b_stage is None
    assert cert.post_verification["H3a"]["pass"] and cert.post_verification["H3b_required"] is False
