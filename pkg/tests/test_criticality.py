import csv

import numpy as np
import pytest

from apriori_diffusion.criticality import (
    Box,
    Settings,
    continue_branch,
    find_critical_points,
    h3a_report,
    newton,
    write_branch_csv,
)
from apriori_diffusion.errors import DomainError, InputError
from apriori_diffusion.melnikov import Melnikov

from conftest import sech_transform

A1 = sech_transform(1.0)


def test_single_harmonic_critical_points(cos_t_system, orbit):
    good, bad = find_critical_points(cos_t_system, [orbit], [1.0], [0.0], 0.0)
    assert not bad and good
    # L = A cos(tau): maxima at 2 pi k with det -A, minima at pi + 2 pi k with det +A
    for cp in good:
        tau = cp.tau_star[0]
        assert np.sin(tau) == pytest.approx(0.0, abs=1e-10)
        assert cp.hess_det == pytest.approx(-A1 * np.cos(tau), abs=1e-9)
        assert cp.grad_norm < 1e-10
    assert any(abs(cp.tau_star[0]) < 1e-10 for cp in good)
    assert any(cp.hess_det > 0 for cp in good)


def test_two_harmonic_selects_largest_curvature(two_harmonic, orbit):
    good, _ = find_critical_points(two_harmonic, [orbit], [1.0], [np.pi / 2], 0.0)
    # L = A (cos(pi/2 - tau) + cos tau) = sqrt 2 A cos(tau - pi/4)
    assert good[0].tau_star[0] == pytest.approx(np.pi / 4, abs=1e-9)
    assert good[0].hess_det == pytest.approx(-np.sqrt(2) * A1, abs=1e-9)


def test_zero_perturbation_has_no_critical_points(unperturbed, orbit):
    assert find_critical_points(unperturbed, [orbit], [1.0], [0.0], 0.0) == ([], [])


def test_constant_potential_is_degenerate(pendulum, orbit):
    from apriori_diffusion.model import FourierFunction, SystemSpec, product_modes, quadratic_rotor

    # cos q - 1 with no angle dependence: L is the constant 4
    pert = product_modes(FourierFunction(((1, 1.0, 0.0),)), 0, 1, (0,), 0)
    system = SystemSpec(quadratic_rotor(1), (pendulum,), pert)
    good, bad = find_critical_points(system, [orbit], [1.0], [0.0], 0.0, seeds_per_dim=2)
    assert not good and bad
    assert all(abs(cp.hess_det) < 1e-9 for cp in bad)


def test_newton_converges_quadratically_near_root(cos_t_system, orbit):
    mk = Melnikov(cos_t_system, [orbit])
    cp, ok = newton(mk, [0.3], [1.0], [0.0], 0.0)
    assert ok and abs(cp.tau_star[0]) < 1e-10


def test_settings_validation():
    with pytest.raises(InputError):
        Settings(newton_tol=0.0)
    with pytest.raises(InputError):
        find_critical_points(None, [], [1.0], [0.0], 0.0, seeds_per_dim=0)


def test_branch_over_box(two_harmonic_branch):
    report = h3a_report(two_harmonic_branch)
    assert report["pass"]
    assert report["nodes"] == 125 and report["failures"] == 0
    assert report["min_abs_det"] > 1
    assert report["max_grad_norm"] < 1e-10


def test_branch_tracks_closed_form(two_harmonic_branch):
    # at I = 1 the critical point is tau = (phi + s) / 2
    br = two_harmonic_branch
    for phi, s in [(np.pi / 2, 0.0), (1.4, 0.2), (1.75, -0.2)]:
        cp = br.locate([1.0], [phi], s)
        assert cp.tau_star[0] == pytest.approx((phi + s) / 2, abs=1e-9)


def test_branch_locate_outside_box(two_harmonic_branch):
    with pytest.raises(DomainError):
        two_harmonic_branch.locate([1.0], [3.0], 0.0)


def test_report_without_branch():
    report = h3a_report(None)
    assert not report["pass"] and report["reason"] == "no nondegenerate critical points"


def test_degenerate_start_rejected(cos_t_system, orbit):
    good, _ = find_critical_points(cos_t_system, [orbit], [1.0], [0.0], 0.0)
    with pytest.raises(InputError):
        continue_branch(cos_t_system, [orbit], good[0], settings=Settings(nondegen_tol=10.0))


def test_branch_csv(two_harmonic_branch, tmp_path):
    path = tmp_path / "branch.csv"
    write_branch_csv(two_harmonic_branch, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 125
    row = rows[0]
    I, phi, s, tau = float(row["I1"]), float(row["phi1"]), float(row["s"]), float(row["tau1"])
    mk = two_harmonic_branch.melnikov
    assert abs(mk.evaluate([tau], [I], [phi], s).grad_tau[0]) < 1e-10


def test_box_contains_wraps_angles():
    box = Box.around([1.0], [0.1], 0.0, 0.2, 0.3)
    assert box.contains([1.1], [0.1 + 2 * np.pi], 0.0)
    assert not box.contains([1.3], [0.1], 0.0)


def test_coarse_grid_is_subdivided(cos_t_system, orbit):
    # tau* = s moves by a full node spacing of 0.5, which a single corrector step rejects as a jump
    good, _ = find_critical_points(cos_t_system, [orbit], [1.0], [0.0], 0.0)
    start = min(good, key=lambda cp: abs(cp.tau_star[0]))
    branch = continue_branch(cos_t_system, [orbit], start, Box.around([1.0], [0.0], 0.0, 0.2, 0.5), grid_steps=3)
    assert branch.continuation_ok
    for idx, cp in branch.grid.items():
        _, _, s = branch.node_params(idx)
        assert cp.tau_star[0] == pytest.approx(s, abs=1e-9)
