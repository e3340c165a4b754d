# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Semantics are defined by ``_kernels_py``; both must agree."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log1p

cnp.import_array()

DEF GEOMETRIC = 0
DEF POISSON = 1
DEF BERNOULLI_PAIR = 2


cdef inline void _one_minus_pgf(int family, const double[:, :, ::1] G, Py_ssize_t a, double scale,
                                double* t, double* out, Py_ssize_t p) noexcept nogil:
    # out_i = 1 - f^{(i)}(1 - t) for mean matrix scale * G
    cdef Py_ssize_t i, j
    cdef double acc, m
    for i in range(p):
        acc = 0.0
        if family == GEOMETRIC:
            for j in range(p):
                acc += log1p(scale * G[a, i, j] * t[j])
            out[i] = -expm1(-acc)
        elif family == POISSON:
            for j in range(p):
                acc += scale * G[a, i, j] * t[j]
            out[i] = -expm1(-acc)
        else:
            m = scale * G[a, i, 0]
            for j in range(p):
                acc += log1p(-t[j])
            out[i] = m * (-expm1(acc))


def quenched_survival_batch(int family, const double[:, :, ::1] shapes,
                            const long[:, ::1] atom_idx, const double[:, ::1] log_scale,
                            const long[::1] horizons):
    """Per-replica survival probabilities q_n for every horizon in ``horizons``.

    Returns an array of shape (replicas, len(horizons), p).
    """
    cdef Py_ssize_t R = atom_idx.shape[0]
    cdef Py_ssize_t H = horizons.shape[0]
    cdef Py_ssize_t p = shapes.shape[1]
    cdef Py_ssize_t r, h, k, i, n
    out_arr = np.empty((R, H, p), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] t = np.empty(p, dtype=np.float64)
    cdef double[::1] u = np.empty(p, dtype=np.float64)
    with nogil:
        for r in range(R):
            for h in range(H):
                n = horizons[h]
                for i in range(p):
                    t[i] = 1.0
                for k in range(n - 1, -1, -1):
                    _one_minus_pgf(family, shapes, atom_idx[r, k], exp(log_scale[r, k]),
                                   &t[0], &u[0], p)
                    for i in range(p):
                        t[i] = u[i]
                for i in range(p):
                    out[r, h, i] = t[i]
    return out_arr


def passage_times(const double[:, ::1] increments, double a):
    """First index n >= 1 with a + sum_{k<n} increments <= 0, or -1 if never."""
    cdef Py_ssize_t R = increments.shape[0]
    cdef Py_ssize_t N = increments.shape[1]
    cdef Py_ssize_t r, k
    cdef double s
    tau_arr = np.full(R, -1, dtype=np.int64)
    cdef long[::1] tau = tau_arr
    with nogil:
        for r in range(R):
            s = a
            for k in range(N):
                s += increments[r, k]
                if s <= 0.0:
                    tau[r] = k + 1
                    break
    return tau_arr
