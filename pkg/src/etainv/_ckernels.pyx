# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the generalized DDIM step and noise selection.

Operation order mirrors ``_pykernels`` so both backends round identically
for the elementwise update.
"""

import numpy as np

from libc.math cimport sqrt


def ddim_update(const double[::1] x, const double[::1] eps, const double[::1] sigma,
                noise, double a, double c_prev, double b_t):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double ab = a * b_t
    cdef double s, v, coef
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef const double[::1] nz
    if noise is None:
        with nogil:
            for i in range(n):
                s = sigma[i]
                v = c_prev - s * s
                if v < 0.0:
                    v = 0.0
                coef = sqrt(v) - ab
                out[i] = a * x[i] + coef * eps[i]
    else:
        nz = noise
        with nogil:
            for i in range(n):
                s = sigma[i]
                v = c_prev - s * s
                if v < 0.0:
                    v = 0.0
                coef = sqrt(v) - ab
                out[i] = (a * x[i] + coef * eps[i]) + s * nz[i]
    return out_arr


def candidate_sq_gaps(const double[::1] residual, const double[::1] sigma, const double[:, ::1] cands):
    cdef Py_ssize_t k = cands.shape[0]
    cdef Py_ssize_t n = cands.shape[1]
    cdef Py_ssize_t j, i
    cdef double acc, diff
    out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for j in range(k):
            acc = 0.0
            for i in range(n):
                diff = residual[i] - sigma[i] * cands[j, i]
                acc = acc + diff * diff
            out[j] = acc
    return out_arr
