from __future__ import annotations

from pathlib import Path

import mpmath as mp
import numpy as np
import pytest

from apriori_diffusion.criticality import Box, continue_branch, find_critical_points
from apriori_diffusion.homoclinic import compute_separatrix
from apriori_diffusion.model import (
    FourierFunction,
    PerturbationSpec,
    SystemSpec,
    product_modes,
    quadratic_rotor,
    standard_pendulum,
)

MODELS = Path(__file__).resolve().parent.parent / "models"

COS_MINUS_ONE = FourierFunction(((0, -1.0, 0.0), (1, 1.0, 0.0)))


# -- independent high-precision oracles ----------------------------------------------

mp.mp.dps = 30


def sech_transform(nu) -> float:
    """-int (cos q0 - 1) cos(nu t) dt = int 2 sech^2 t cos(nu t) dt, by mpmath quadrature."""
    nu = mp.mpf(nu)
    f = lambda t: 2 * mp.sech(t) ** 2 * mp.cos(nu * t)
    return float(mp.quad(f, [-mp.inf, -5, 0, 5, mp.inf]))


def sin_transform(nu) -> float:
    """-int sin(q0(t)) sin(nu t) dt with q0 = 4 atan(e^t); sin q0 = -2 sinh t / cosh^2 t."""
    nu = mp.mpf(nu)
    f = lambda t: 2 * mp.sinh(t) / mp.cosh(t) ** 2 * mp.sin(nu * t)
    return float(mp.quad(f, [-mp.inf, -5, 0, 5, mp.inf]))


def two_harmonic_reduced(I, theta):
    """(L*, dL*/dI, dL*/dtheta) of the two-harmonic model, by mpmath root finding.

    L(tau) = A(I) cos(theta - I tau) + A(1) cos(tau) with A from sech_transform; the
    critical point is continued from tau = theta / 2, which is exact at I = 1.
    """
    A = lambda nu: mp.quad(lambda t: 2 * mp.sech(t) ** 2 * mp.cos(nu * t), [-mp.inf, 0, mp.inf])

    def Lstar(Iv, th):
        Iv, th = mp.mpf(Iv), mp.mpf(th)
        AI, A1 = A(Iv), A(1)
        dL = lambda tau: AI * Iv * mp.sin(th - Iv * tau) - A1 * mp.sin(tau)
        tau = mp.findroot(dL, th / 2)
        return AI * mp.cos(th - Iv * tau) + A1 * mp.cos(tau)

    val = Lstar(I, theta)
    dI = mp.diff(lambda x: Lstar(x, theta), I)
    dth = mp.diff(lambda x: Lstar(I, x), theta)
    return float(val), float(dI), float(dth)


# -- systems -------------------------------------------------------------------------


@pytest.fixture(scope="session")
def pendulum():
    return standard_pendulum()


@pytest.fixture(scope="session")
def orbit(pendulum):
    return compute_separatrix(pendulum)


@pytest.fixture(scope="session")
def cos_t_system(pendulum):
    """H1 = (cos q - 1) cos t."""
    return SystemSpec(quadratic_rotor(1), (pendulum,), product_modes(COS_MINUS_ONE, 0, 1, (0,), 1), 0.01)


@pytest.fixture(scope="session")
def two_harmonic(pendulum):
    """H1 = (cos q - 1)(cos t + cos phi)."""
    pert = product_modes(COS_MINUS_ONE, 0, 1, (0,), 1) + product_modes(COS_MINUS_ONE, 0, 1, (1,), 0)
    return SystemSpec(quadratic_rotor(1), (pendulum,), pert, 0.01)


@pytest.fixture(scope="session")
def unperturbed(pendulum):
    return SystemSpec(quadratic_rotor(1), (pendulum,), PerturbationSpec(), 0.01)


@pytest.fixture(scope="session")
def two_harmonic_branch(two_harmonic, orbit):
    """Branch on the small box around (I, phi, s) = (1, pi/2, 0)."""
    good, _ = find_critical_points(two_harmonic, [orbit], [1.0], [np.pi / 2], 0.0)
    box = Box.around([1.0], [np.pi / 2], 0.0, I_half=0.2, angle_half=0.25)
    return continue_branch(two_harmonic, [orbit], good[0], box)


@pytest.fixture(scope="session")
def wide_branch(two_harmonic, orbit):
    """Branch on a box wide enough to hold the time-1 effective flow from (1, pi/2)."""
    good, _ = find_critical_points(two_harmonic, [orbit], [1.0], [np.pi / 2], 0.0)
    box = Box(np.array([-0.25]), np.array([1.45]), 0.0, np.array([1.5]), np.array([0.35]), 0.25)
    return continue_branch(two_harmonic, [orbit], good[0], box, grid_steps=(31, 7, 3))
