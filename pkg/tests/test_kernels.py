import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apriori_diffusion import kernels
from apriori_diffusion.kernels import backends

IMPLS = backends()
needs_compiled = pytest.mark.skipif("compiled" not in IMPLS, reason="compiled extension not built")


def _case(seed, nodes, n, d, modes):
    rng = np.random.default_rng(seed)
    c = lambda x: np.ascontiguousarray(x, dtype=float)
    return (
        c(np.linspace(-20, 20, nodes)),
        c(rng.uniform(-3, 3, (nodes, n))),
        c(rng.normal(size=(nodes, n))),
        c(rng.normal(size=(nodes, n))),
        c(rng.integers(-3, 4, (modes, n))),
        c(rng.uniform(0, 6.3, modes)),
        c(rng.normal(size=modes)),
        c(rng.normal(size=modes)),
        c(rng.integers(-2, 3, (modes, d))),
        c(rng.normal(size=(modes, d))),
        c(rng.integers(-2, 3, modes)),
    )


def test_selected_backend_is_reported():
    assert kernels.BACKEND in IMPLS


@needs_compiled
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 3), st.integers(1, 3), st.integers(1, 8), st.booleans())
@settings(max_examples=60, deadline=None)
def test_integrand_parity(seed, nodes, n, d, modes, want_hess):
    args = _case(seed, nodes, n, d, modes) + (want_hess,)
    a = IMPLS["python"].melnikov_integrand(*args)
    b = IMPLS["compiled"].melnikov_integrand(*args)
    assert a.shape == b.shape
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_compiled
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3), st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_gradient_parity(seed, n, d, modes):
    rng = np.random.default_rng(seed)
    c = lambda x: np.ascontiguousarray(x, dtype=float)
    args = (
        c(rng.uniform(-3, 3, n)),
        c(rng.uniform(0, 6, d)),
        float(rng.normal()),
        c(rng.integers(-3, 4, (modes, n))),
        c(rng.integers(-2, 3, (modes, d))),
        c(rng.integers(-2, 3, modes)),
        c(rng.normal(size=modes)),
        c(rng.uniform(0, 6, modes)),
    )
    for x, y in zip(IMPLS["python"].h1_gradients(*args), IMPLS["compiled"].h1_gradients(*args)):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-13)


@needs_compiled
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
@settings(deadline=None)
def test_fourier_derivative_parity(seed, n, J):
    rng = np.random.default_rng(seed)
    c = lambda x: np.ascontiguousarray(x, dtype=float)
    args = (c(rng.uniform(-3, 3, n)), c(np.tile(np.arange(J), (n, 1))), c(rng.normal(size=(n, J))), c(rng.normal(size=(n, J))))
    assert np.allclose(IMPLS["python"].fourier_derivative(*args), IMPLS["compiled"].fourier_derivative(*args), rtol=1e-12, atol=1e-13)


def test_bracket_has_no_cancellation():
    # tiny deviation: cos(X + T) - cos(T) ~ -X sin T must keep its relative accuracy
    args = list(_case(1, 1, 1, 1, 1))
    args[1] = np.array([[1e-12]])
    args[4] = np.array([[1.0]])
    args[5] = np.array([0.7])
    args[6] = np.array([0.0])
    args[7] = np.array([1.0])
    out = IMPLS["python"].melnikov_integrand(*args, False)
    assert out[0, 0] == pytest.approx(-1e-12 * np.sin(0.7), rel=1e-9)
