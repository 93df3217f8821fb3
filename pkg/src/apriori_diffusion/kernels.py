"""Backend selection for the hot kernels.

The compiled extension is used when it was built; set ``APRIORI_DIFFUSION_PUREPY=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("APRIORI_DIFFUSION_PUREPY", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        pass


def _c(x):
    return np.ascontiguousarray(x, dtype=float)


def melnikov_integrand(t, u, qd, qdd, K, theta0, nu, amp, Lm, LW, mvec, want_hess=True):
    return _impl.melnikov_integrand(
        _c(t), _c(u), _c(qd), _c(qdd), _c(K), _c(theta0), _c(nu), _c(amp), _c(Lm), _c(LW), _c(mvec), bool(want_hess)
    )


def h1_gradients(q, phi, t, K, Lm, mvec, amp, chi):
    return _impl.h1_gradients(_c(q), _c(phi), float(t), _c(K), _c(Lm), _c(mvec), _c(amp), _c(chi))


def fourier_derivative(q, harmonics, cos_c, sin_c):
    return _impl.fourier_derivative(_c(q), _c(harmonics), _c(cos_c), _c(sin_c))


def backends():
    """Available implementations keyed by name, for parity tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]

        out["compiled"] = _compiled
    except ImportError:
        pass
    return out
