# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; signatures match the numpy versions in _kernels_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()


def melnikov_integrand(
    const double[::1] t,
    const double[:, ::1] u,
    const double[:, ::1] qd,
    const double[:, ::1] qdd,
    const double[:, ::1] K,
    const double[::1] theta0,
    const double[::1] nu,
    const double[::1] amp,
    const double[:, ::1] Lm,
    const double[:, ::1] LW,
    const double[::1] mvec,
    bint want_hess,
):
    cdef Py_ssize_t N = u.shape[0], n = u.shape[1], M = K.shape[0], d = Lm.shape[1]
    cdef Py_ssize_t cols = 1 + n + 2 * d + 1 + (n * n if want_hess else 0)
    out_arr = np.zeros((N, cols))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, j, a, b
    cdef Py_ssize_t o_phi = 1 + n, o_I = 1 + n + d, o_s = 1 + n + 2 * d, o_h = 2 + n + 2 * d
    cdef double X, Th, half, sh, dth, asn, acs, tr
    with nogil:
        for r in range(N):
            tr = t[r]
            for j in range(M):
                X = 0.0
                for a in range(n):
                    X = X + K[j, a] * u[r, a]
                Th = theta0[j] + tr * nu[j]
                half = 0.5 * X
                sh = sin(half)
                out[r, 0] += -2.0 * amp[j] * sin(half + Th) * sh
                dth = -2.0 * amp[j] * cos(half + Th) * sh
                asn = amp[j] * sin(X + Th)
                for a in range(n):
                    out[r, 1 + a] -= asn * K[j, a] * qd[r, a]
                for a in range(d):
                    out[r, o_phi + a] += dth * Lm[j, a]
                    out[r, o_I + a] += dth * LW[j, a] * tr
                out[r, o_s] += dth * mvec[j]
                if want_hess:
                    acs = amp[j] * cos(X + Th)
                    for a in range(n):
                        if K[j, a] == 0.0:
                            continue
                        for b in range(n):
                            out[r, o_h + a * n + b] -= acs * K[j, a] * K[j, b] * qd[r, a] * qd[r, b]
                        out[r, o_h + a * n + a] -= asn * K[j, a] * qdd[r, a]
    return out_arr


def h1_gradients(
    const double[::1] q,
    const double[::1] phi,
    double t,
    const double[:, ::1] K,
    const double[:, ::1] Lm,
    const double[::1] mvec,
    const double[::1] amp,
    const double[::1] chi,
):
    cdef Py_ssize_t M = K.shape[0], n = K.shape[1], d = Lm.shape[1], j, a
    gq_arr = np.zeros(n)
    gphi_arr = np.zeros(d)
    cdef double[::1] gq = gq_arr
    cdef double[::1] gphi = gphi_arr
    cdef double gt = 0.0, arg, w
    with nogil:
        for j in range(M):
            arg = mvec[j] * t + chi[j]
            for a in range(n):
                arg = arg + K[j, a] * q[a]
            for a in range(d):
                arg = arg + Lm[j, a] * phi[a]
            w = -amp[j] * sin(arg)
            for a in range(n):
                gq[a] += w * K[j, a]
            for a in range(d):
                gphi[a] += w * Lm[j, a]
            gt += w * mvec[j]
    return gq_arr, gphi_arr, gt


def fourier_derivative(
    const double[::1] q,
    const double[:, ::1] harmonics,
    const double[:, ::1] cos_c,
    const double[:, ::1] sin_c,
):
    cdef Py_ssize_t n = harmonics.shape[0], J = harmonics.shape[1], i, j
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double kq, acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(J):
                kq = harmonics[i, j] * q[i]
                acc = acc + harmonics[i, j] * (sin_c[i, j] * cos(kq) - cos_c[i, j] * sin(kq))
            out[i] = acc
    return out_arr
