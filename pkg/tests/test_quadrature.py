import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apriori_diffusion.errors import AccuracyError
from apriori_diffusion.quadrature import NODES, W_GAUSS, W_KRONROD, integrate


@pytest.mark.parametrize("deg", range(0, 24))
def test_kronrod_rule_exact_to_degree_23(deg):
    exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
    assert np.dot(W_KRONROD, NODES**deg) == pytest.approx(exact, abs=1e-15)


@pytest.mark.parametrize("deg", range(0, 14))
def test_embedded_gauss_rule_exact_to_degree_13(deg):
    exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
    assert np.dot(W_GAUSS, NODES**deg) == pytest.approx(exact, abs=1e-15)


def test_sech_squared_cosine_against_mpmath():
    f = lambda t: (2 / np.cosh(t) ** 2 * np.cos(t))[:, None]
    res = integrate(f, -40, 40, 1e-13)
    oracle = float(mp.quad(lambda t: 2 * mp.sech(t) ** 2 * mp.cos(t), [-40, 0, 40]))
    assert res.value[0] == pytest.approx(oracle, abs=1e-12)
    assert res.error <= 1e-13


def test_vector_valued_integrand():
    f = lambda t: np.stack([np.exp(-t * t), t * t * np.exp(-t * t)], axis=1)
    res = integrate(f, -12, 12, 1e-13)
    assert res.value == pytest.approx([np.sqrt(np.pi), np.sqrt(np.pi) / 2], abs=1e-12)


@given(st.floats(0.2, 5.0), st.floats(-3, 3))
def test_oscillatory_gaussian(width, freq):
    f = lambda t: (np.exp(-((t / width) ** 2)) * np.cos(freq * t))[:, None]
    res = integrate(f, -20 * width, 20 * width, 1e-11)
    exact = width * np.sqrt(np.pi) * np.exp(-((freq * width) ** 2) / 4)
    assert res.value[0] == pytest.approx(exact, abs=1e-10)


def test_accuracy_error_carries_best_estimate():
    f = lambda t: (1 / np.sqrt(np.abs(t) + 1e-300))[:, None]
    with pytest.raises(AccuracyError) as info:
        integrate(f, -1, 1, 1e-14, max_iter=3)
    assert info.value.best is not None
    assert info.value.best.value.shape == (1,)
