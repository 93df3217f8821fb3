"""Pure numpy versions of the hot kernels; the compiled module mirrors these signatures."""

from __future__ import annotations

import numpy as np


def melnikov_integrand(t, u, qd, qdd, K, theta0, nu, amp, Lm, LW, mvec, want_hess):
    """Per-node bracket H1(q0, angles) - H1(0, angles) and its parameter derivatives.

    Columns: value, d/dtau (n), d/dphi (d), d/dI (d), d/ds, then d2/dtau2 (n*n) if
    ``want_hess``.  The overall minus sign of the potential is left to the caller.
    """
    N, n = u.shape
    d = Lm.shape[1]
    X = u @ K.T
    Th = theta0[None, :] + t[:, None] * nu[None, :]
    half = 0.5 * X
    s_half = np.sin(half)
    # cos(X + Th) - cos(Th) and sin(X + Th) - sin(Th) without cancellation
    dcos = -2.0 * np.sin(half + Th) * s_half
    dsin = 2.0 * np.cos(half + Th) * s_half
    a_sin = amp * np.sin(X + Th)
    cols = 1 + n + 2 * d + 1 + (n * n if want_hess else 0)
    out = np.empty((N, cols))
    out[:, 0] = dcos @ amp
    out[:, 1 : 1 + n] = -(a_sin @ K) * qd
    dtheta = -amp * dsin
    out[:, 1 + n : 1 + n + d] = dtheta @ Lm
    out[:, 1 + n + d : 1 + n + 2 * d] = (dtheta @ LW) * t[:, None]
    out[:, 1 + n + 2 * d] = dtheta @ mvec
    if want_hess:
        a_cos = amp * np.cos(X + Th)
        KK = K[:, :, None] * K[:, None, :]
        H = -np.einsum("nj,jab->nab", a_cos, KK) * qd[:, :, None] * qd[:, None, :]
        diag = -(a_sin @ K) * qdd
        idx = np.arange(n)
        H[:, idx, idx] += diag
        out[:, 1 + n + 2 * d + 1 :] = H.reshape(N, n * n)
    return out


def h1_gradients(q, phi, t, K, Lm, mvec, amp, chi):
    """(dH1/dq, dH1/dphi, dH1/dt) at one point."""
    w = -amp * np.sin(K @ q + Lm @ phi + mvec * t + chi)
    return w @ K, w @ Lm, float(w @ mvec)


def fourier_derivative(q, harmonics, cos_c, sin_c):
    """sum_k d/dq [c_k cos(k q) + s_k sin(k q)] for a vector of angles (one series each).

    ``harmonics``, ``cos_c``, ``sin_c`` are (n, J) arrays, zero-padded.
    """
    kq = harmonics * q[:, None]
    return np.sum(harmonics * (sin_c * np.cos(kq) - cos_c * np.sin(kq)), axis=1)
