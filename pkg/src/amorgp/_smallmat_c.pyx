# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled batched Cholesky and triangular solves for small matrices.

One factorization / solve per batch element, unrolled in C loops.  These
mirror the numpy fallbacks in amorgp.smallmat and are parity-tested
against them.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef int _chol_one(const double[:, :] a, double[:, :] l, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(m):
        s = a[j, j]
        for k in range(j):
            s -= l[j, k] * l[j, k]
        if s <= 0.0:
            return 0
        l[j, j] = sqrt(s)
        for i in range(j + 1, m):
            s = a[i, j]
            for k in range(j):
                s -= l[i, k] * l[j, k]
            l[i, j] = s / l[j, j]
    return 1


def chol_batch(double[:, :, ::1] a):
    """Lower Cholesky factor per slice; returns (l, ok) with ok uint8."""
    cdef Py_ssize_t b = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    l_arr = np.zeros((b, m, m), dtype=np.float64)
    ok_arr = np.zeros(b, dtype=np.uint8)
    cdef double[:, :, ::1] l = l_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(b):
            ok[i] = _chol_one(a[i], l[i], m)
    return l_arr, ok_arr


cdef void _fwd_one(const double[:, :] l, const double[:, :] rhs, double[:, :] x,
                   Py_ssize_t m, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t i, j, c
    cdef double s
    for c in range(k):
        for i in range(m):
            s = rhs[i, c]
            for j in range(i):
                s -= l[i, j] * x[j, c]
            x[i, c] = s / l[i, i]


cdef void _bwd_one(const double[:, :] l, const double[:, :] rhs, double[:, :] x,
                   Py_ssize_t m, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t i, j, c
    cdef double s
    for c in range(k):
        for i in range(m - 1, -1, -1):
            s = rhs[i, c]
            for j in range(i + 1, m):
                s -= l[j, i] * x[j, c]
            x[i, c] = s / l[i, i]


def trisolve_batch(double[:, :, ::1] l, double[:, :, ::1] rhs, int trans):
    """Solve L x = rhs per slice; trans nonzero solves L^T x = rhs."""
    cdef Py_ssize_t b = l.shape[0]
    cdef Py_ssize_t m = l.shape[1]
    cdef Py_ssize_t k = rhs.shape[2]
    x_arr = np.zeros((b, m, k), dtype=np.float64)
    cdef double[:, :, ::1] x = x_arr
    cdef Py_ssize_t i
    with nogil:
        if trans:
            for i in range(b):
                _bwd_one(l[i], rhs[i], x[i], m, k)
        else:
            for i in range(b):
                _fwd_one(l[i], rhs[i], x[i], m, k)
    return x_arr
