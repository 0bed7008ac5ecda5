# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every loop here has a twin in ``_fallback.py`` that performs the same
floating-point operations in the same order, so both backends produce
bit-identical results (the extension is built with ``-ffp-contract=off``).
"""

import numpy as np

from libc.math cimport isfinite


def step_integral(const double[:, :, :, :] phi, const double[:, :, :] dbeta):
    """Partial sums of the double sum over channels j and blocks l.

    phi has shape (R, L, m, Y) and may be broadcast along R (zero stride);
    dbeta has shape (R, m, L).  Returns out of shape (R, m, Y) with
    out[r, j] = sum over i <= j and all l of phi[r, l, i] * dbeta[r, i, l],
    accumulated with j outer, l inner.
    """
    cdef Py_ssize_t R = dbeta.shape[0]
    cdef Py_ssize_t m = dbeta.shape[1]
    cdef Py_ssize_t L = dbeta.shape[2]
    cdef Py_ssize_t Y = phi.shape[3]
    if phi.shape[1] != L or phi.shape[2] < m:
        raise ValueError("phi and dbeta shapes disagree")
    if phi.shape[0] != R and phi.shape[0] != 1:
        raise ValueError("phi replica axis must be 1 or match dbeta")
    out_arr = np.zeros((R, m, Y), dtype=np.float64)
    acc_arr = np.zeros(Y, dtype=np.float64)
    cdef double[:, :, :] out = out_arr
    cdef double[:] acc = acc_arr
    cdef Py_ssize_t r, rp, j, l, y
    cdef double db
    cdef bint shared = phi.shape[0] == 1
    with nogil:
        for r in range(R):
            rp = 0 if shared else r
            for y in range(Y):
                acc[y] = 0.0
            for j in range(m):
                for l in range(L):
                    db = dbeta[r, j, l]
                    for y in range(Y):
                        acc[y] = acc[y] + phi[rp, l, j, y] * db
                for y in range(Y):
                    out[r, j, y] = acc[y]
    return out_arr


def masked_block_sum(const double[:, :, :] inc, const long[:] cells,
                     Py_ssize_t k_lo, Py_ssize_t k_hi):
    """Sum inc[r, c, k] over c in cells (outer) and k_lo <= k < k_hi (inner)."""
    cdef Py_ssize_t R = inc.shape[0]
    cdef Py_ssize_t C = cells.shape[0]
    out_arr = np.zeros(R, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef Py_ssize_t r, i, k
    cdef long c
    cdef double s
    if k_lo < 0 or k_hi > inc.shape[2]:
        raise IndexError("step range outside the field")
    for i in range(C):
        if cells[i] < 0 or cells[i] >= inc.shape[1]:
            raise IndexError("cell index out of range")
    with nogil:
        for r in range(R):
            s = 0.0
            for i in range(C):
                c = cells[i]
                for k in range(k_lo, k_hi):
                    s = s + inc[r, c, k]
            out[r] = s
    return out_arr


def welford_update(long long count, double mean, double m2, const double[:] x):
    """Fold samples into a (count, mean, M2) running state, left to right."""
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, delta
    cdef bint bad = False
    with nogil:
        for i in range(n):
            v = x[i]
            if not isfinite(v):
                bad = True
                break
            count += 1
            delta = v - mean
            mean = mean + delta / count
            m2 = m2 + delta * (v - mean)
    if bad:
        raise ValueError("non-finite sample")
    return count, mean, m2
