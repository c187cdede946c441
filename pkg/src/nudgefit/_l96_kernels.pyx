# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled two-layer Lorenz 96 kernels.

Layout: ``(u_0..u_{K-1}, v_{0,1..J}, ..., v_{K-1,1..J})``.  Signatures mirror
:mod:`nudgefit._l96_kernels_py`.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _tendency(const double* x, const double* d_slow, const double* d_fast,
                           const double* gamma, double F, Py_ssize_t K, Py_ssize_t J,
                           double* out) noexcept nogil:
    cdef Py_ssize_t k, j, km1, km2, kp1, base
    cdef double uk, coupling, vkj
    for k in range(K):
        km1 = k - 1 if k >= 1 else k - 1 + K
        km2 = k - 2 if k >= 2 else k - 2 + K
        kp1 = k + 1 if k + 1 < K else k + 1 - K
        uk = x[k]
        base = K + k * J
        coupling = 0.0
        for j in range(J):
            vkj = x[base + j]
            coupling += gamma[k * J + j] * vkj
            out[base + j] = -d_fast[k * J + j] * vkj - gamma[k * J + j] * uk * uk
        out[k] = x[km1] * (x[kp1] - x[km2]) + coupling * uk - d_slow[k] * uk + F


def l96_tendency(const double[::1] x, const double[::1] d_slow, const double[:, ::1] d_fast,
                 const double[:, ::1] gamma, double F, double[::1] out=None):
    cdef Py_ssize_t K = d_slow.shape[0]
    cdef Py_ssize_t J = d_fast.shape[1]
    if x.shape[0] != K * (J + 1):
        raise ValueError("state length does not match K*(J+1)")
    if out is None:
        out = np.empty(x.shape[0])
    _tendency(&x[0], &d_slow[0], &d_fast[0, 0], &gamma[0, 0], F, K, J, &out[0])
    return np.asarray(out)


cdef inline void _coupled(const double* s, double* out, const double* ds_t, const double* df_t,
                          const double* ds_p, const double* df_p, const double* gamma,
                          const double* gains, double F, Py_ssize_t K, Py_ssize_t J,
                          Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    _tendency(s, ds_t, df_t, gamma, F, K, J, out)
    _tendency(s + n, ds_p, df_p, gamma, F, K, J, out + n)
    for i in range(n):
        if gains[i] != 0.0:
            out[n + i] -= gains[i] * (s[n + i] - s[i])


def l96_coupled_rk4(double[::1] truth, double[::1] nudged,
                    const double[::1] ds_true, const double[:, ::1] df_true,
                    const double[::1] ds_proxy, const double[:, ::1] df_proxy,
                    const double[:, ::1] gamma, double F, const double[::1] gains,
                    double dt, Py_ssize_t nsteps, double[:, ::1] record=None):
    """Advance truth and nudged states in place by ``nsteps`` RK4 steps.

    The nudged tendency reads the truth at every stage.  If ``record`` is
    given, row i receives the truth after step i+1.  Returns the index of the
    first step that produced a non-finite value, or -1.
    """
    cdef Py_ssize_t K = ds_true.shape[0]
    cdef Py_ssize_t J = df_true.shape[1]
    cdef Py_ssize_t n = truth.shape[0]
    cdef Py_ssize_t m = 2 * n
    cdef Py_ssize_t step, i
    cdef bint rec = record is not None
    if n != K * (J + 1) or nudged.shape[0] != n or gains.shape[0] != n:
        raise ValueError("dimension mismatch")
    if rec and (record.shape[0] < nsteps or record.shape[1] != n):
        raise ValueError("record buffer too small")
    cdef double[::1] s = np.empty(m)
    cdef double[::1] tmp = np.empty(m)
    cdef double[::1] k1 = np.empty(m)
    cdef double[::1] k2 = np.empty(m)
    cdef double[::1] k3 = np.empty(m)
    cdef double[::1] k4 = np.empty(m)
    cdef double h2 = 0.5 * dt, h6 = dt / 6.0
    cdef double v
    cdef Py_ssize_t bad = -1
    for i in range(n):
        s[i] = truth[i]
        s[n + i] = nudged[i]
    with nogil:
        for step in range(nsteps):
            _coupled(&s[0], &k1[0], &ds_true[0], &df_true[0, 0], &ds_proxy[0], &df_proxy[0, 0],
                     &gamma[0, 0], &gains[0], F, K, J, n)
            for i in range(m):
                tmp[i] = s[i] + h2 * k1[i]
            _coupled(&tmp[0], &k2[0], &ds_true[0], &df_true[0, 0], &ds_proxy[0], &df_proxy[0, 0],
                     &gamma[0, 0], &gains[0], F, K, J, n)
            for i in range(m):
                tmp[i] = s[i] + h2 * k2[i]
            _coupled(&tmp[0], &k3[0], &ds_true[0], &df_true[0, 0], &ds_proxy[0], &df_proxy[0, 0],
                     &gamma[0, 0], &gains[0], F, K, J, n)
            for i in range(m):
                tmp[i] = s[i] + dt * k3[i]
            _coupled(&tmp[0], &k4[0], &ds_true[0], &df_true[0, 0], &ds_proxy[0], &df_proxy[0, 0],
                     &gamma[0, 0], &gains[0], F, K, J, n)
            for i in range(m):
                v = s[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                s[i] = v
                if not (v - v == 0.0):
                    bad = step
            if rec:
                for i in range(n):
                    record[step, i] = s[i]
            if bad >= 0:
                break
    for i in range(n):
        truth[i] = s[i]
        nudged[i] = s[n + i]
    return bad
