import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apriori_diffusion.errors import InputError
from apriori_diffusion.homoclinic import (
    compute_separatrix,
    dump_orbit_csv,
    energy_residual,
    orbit_derivative,
    orbit_value,
    read_orbit_csv,
)
from apriori_diffusion.model import PendulumSpec, standard_pendulum


def closed_form(t):
    return 4 * np.arctan(np.exp(t)), 2 / np.cosh(t)


def test_matches_closed_form(orbit):
    t = np.linspace(-10, 10, 2001)
    q, p = orbit_value(orbit, t)
    qc, pc = closed_form(t)
    assert np.max(np.abs(q - qc)) < 1e-10
    assert np.max(np.abs(p - pc)) < 1e-10


@pytest.mark.parametrize("t", [0.0, 1.5, 3.0, -7.0])
def test_point_values_against_mpmath(orbit, t):
    p_exact = float(2 * mp.sech(t))
    q_exact = float(4 * mp.atan(mp.exp(t)))
    q, p = orbit_value(orbit, t)
    assert p == pytest.approx(p_exact, abs=1e-12)
    assert q == pytest.approx(q_exact, abs=1e-12)


def test_tail_keeps_relative_accuracy(orbit):
    # far beyond the sampled window the deviation is the exponential tail 4 e^{-|t|}
    u, p, _, _ = orbit.eval_arrays(np.array([-40.0, 40.0]))
    assert abs(u[0]) == pytest.approx(float(4 * mp.exp(-40)), rel=1e-8)
    assert p[1] == pytest.approx(float(2 * mp.sech(40)), rel=1e-8)


def test_faster_pendulum():
    orbit = compute_separatrix(standard_pendulum(4.0))
    t = np.linspace(-5, 5, 101)
    _, p = orbit_value(orbit, t)
    assert orbit.lam == pytest.approx(2.0)
    assert np.allclose(p, 4 / np.cosh(2 * t), atol=1e-10)


def test_energy_and_symmetry(orbit):
    assert energy_residual(orbit) < 1e-10
    assert orbit.max_energy_error < 1e-10
    t = np.linspace(0, 8, 50)
    _, p_plus = orbit_value(orbit, t)
    _, p_minus = orbit_value(orbit, -t)
    assert np.allclose(p_plus, p_minus, atol=1e-12)


def test_l1_norm_of_momentum(orbit):
    # int 2 sech t dt = 2 pi
    assert orbit.l1_norms["p"] == pytest.approx(2 * np.pi, abs=1e-6)


@given(st.floats(-12, 12))
@settings(deadline=None)
def test_derivative_is_hamiltonian_vector_field(t):
    orbit = _cached()
    qd, pd = orbit_derivative(orbit, t)
    h = 1e-5
    q1, p1 = orbit_value(orbit, t + h)
    q0, p0 = orbit_value(orbit, t - h)
    assert qd == pytest.approx((q1 - q0) / (2 * h), abs=1e-8)
    assert pd == pytest.approx((p1 - p0) / (2 * h), abs=1e-8)


_ORBIT = []


def _cached():
    if not _ORBIT:
        _ORBIT.append(compute_separatrix(standard_pendulum()))
    return _ORBIT[0]


def test_reverse_branch_moves_backwards():
    pend = PendulumSpec(((0, -1.0, 0.0), (1, 1.0, 0.0)), branch=-1)
    orbit = compute_separatrix(pend)
    q, p = orbit_value(orbit, 2.0)
    assert p == pytest.approx(-2 / np.cosh(2.0), abs=1e-10)
    assert q < np.pi


def test_asymmetric_potential_energy():
    # V'(0) = -0.4 + 2 * 0.2 = 0
    pend = PendulumSpec(((0, -1.0, 0.0), (1, 1.0, -0.4), (2, 0.0, 0.2)))
    orbit = compute_separatrix(pend)
    assert orbit.max_energy_error < 1e-10
    assert orbit.decay_rate_left == pytest.approx(orbit.lam, rel=0.02)


def test_short_window_rejected(pendulum):
    with pytest.raises(InputError):
        compute_separatrix(pendulum, t_span=5.0)


def test_csv_round_trip(orbit, tmp_path):
    path = tmp_path / "orbit.csv"
    dump_orbit_csv(orbit, path)
    t, q, p = read_orbit_csv(path)
    t0, q0, p0 = orbit.samples
    assert np.array_equal(t, t0) and np.array_equal(q, q0) and np.array_equal(p, p0)
