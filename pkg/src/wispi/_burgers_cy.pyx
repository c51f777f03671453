# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled spectral Burgers time-stepping kernel.

Same contract as `wispi._burgers_np`: integrating-factor Heun steps on the
Galerkin-truncated system, state = complex coefficients of wavenumbers
1..K of a real mean-zero field.
"""

import numpy as np

from libc.math cimport exp, M_PI

BACKEND = "cython"


cdef inline double complex _mode(const double complex[::1] v, Py_ssize_t m) noexcept nogil:
    if m > 0:
        return v[m - 1]
    return v[-m - 1].conjugate()


cdef void _quadratic(const double complex[::1] v, double complex[::1] out) noexcept nogil:
    cdef Py_ssize_t k_max = v.shape[0]
    cdef Py_ssize_t k, p
    cdef double complex acc
    for k in range(1, k_max + 1):
        acc = 0
        for p in range(k - k_max, k_max + 1):
            if p == 0 or p == k:
                continue
            acc = acc + _mode(v, p) * _mode(v, k - p)
        out[k - 1] = acc


def convolve_quadratic(v):
    """Galerkin-truncated coefficients (v^2)_k for k = 1..K."""
    cdef double complex[::1] vv = np.ascontiguousarray(v, dtype=complex)
    out = np.empty(vv.shape[0], dtype=complex)
    cdef double complex[::1] ov = out
    _quadratic(vv, ov)
    return out


def integrate_modes(v0, double nu, forcing, double t_end, Py_ssize_t n_steps, double guard):
    """Advance to t_end in n_steps integrating-factor Heun steps.

    Returns (final modes, status); status 1 means the blow-up guard tripped.
    """
    state = np.array(v0, dtype=complex)
    force = np.ascontiguousarray(forcing, dtype=complex)
    cdef double complex[::1] v = state
    cdef double complex[::1] f = force
    cdef Py_ssize_t k_max = v.shape[0]
    cdef double tau = t_end / n_steps
    decay_arr = np.empty(k_max, dtype=float)
    cdef double[::1] decay = decay_arr
    work1 = np.empty(k_max, dtype=complex)
    work2 = np.empty(k_max, dtype=complex)
    pred = np.empty(k_max, dtype=complex)
    cdef double complex[::1] s1 = work1
    cdef double complex[::1] s2 = work2
    cdef double complex[::1] vp = pred
    cdef Py_ssize_t step, k
    cdef double complex vn
    cdef double omega
    cdef int status = 0
    cdef double complex minus_i_pi = -1j * M_PI

    for k in range(k_max):
        omega = 2.0 * M_PI * (k + 1)
        decay[k] = exp(-nu * omega * omega * tau)

    with nogil:
        for step in range(n_steps):
            _quadratic(v, s1)
            for k in range(k_max):
                s1[k] = minus_i_pi * (k + 1) * s1[k] + f[k]
                vp[k] = decay[k] * (v[k] + tau * s1[k])
            _quadratic(vp, s2)
            for k in range(k_max):
                s2[k] = minus_i_pi * (k + 1) * s2[k] + f[k]
            status = 0
            for k in range(k_max):
                vn = decay[k] * v[k] + 0.5 * tau * (decay[k] * s1[k] + s2[k])
                if abs(vn) > guard:
                    status = 1
                    break
                vp[k] = vn
            if status:
                break
            for k in range(k_max):
                v[k] = vp[k]

    return state, status
