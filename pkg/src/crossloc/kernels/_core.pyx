# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: row logsumexp/softmax and the Sinkhorn dual loop.

Must match the NumPy reference in ``_numpy.py`` up to floating-point
roundoff; summations run in index order within each row.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log

cnp.import_array()


def logsumexp_2d(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            s += exp(x[i, j] - m)
        o[i] = m + log(s)
    return out


def softmax_2d(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            o[i, j] = exp(x[i, j] - m)
            s += o[i, j]
        for j in range(k):
            o[i, j] /= s
    return out


def sinkhorn_duals(double[:, ::1] s_reg, double[::1] log_a, double[::1] log_b,
                   int n_iters, double tol):
    cdef Py_ssize_t n = s_reg.shape[0], c = s_reg.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_arr = np.zeros(c, dtype=np.float64)
    cdef double[::1] u = u_arr, v = v_arr
    cdef double[::1] row = np.empty(c, dtype=np.float64)
    cdef Py_ssize_t i, j, it
    cdef double m, s, p, violation = np.inf
    cdef int it_run = 0
    for it in range(1, n_iters + 1):
        it_run = it
        # u update: row-wise logsumexp of s_reg + v
        for i in range(n):
            m = s_reg[i, 0] + v[0]
            for j in range(1, c):
                if s_reg[i, j] + v[j] > m:
                    m = s_reg[i, j] + v[j]
            s = 0.0
            for j in range(c):
                s += exp(s_reg[i, j] + v[j] - m)
            u[i] = log_a[i] - (m + log(s))
        # v update: column-wise logsumexp of s_reg + u
        for j in range(c):
            m = s_reg[0, j] + u[0]
            for i in range(1, n):
                if s_reg[i, j] + u[i] > m:
                    m = s_reg[i, j] + u[i]
            s = 0.0
            for i in range(n):
                s += exp(s_reg[i, j] + u[i] - m)
            v[j] = log_b[j] - (m + log(s))
        # marginal violation of exp(s_reg + u + v)
        for j in range(c):
            row[j] = 0.0
        violation = 0.0
        for i in range(n):
            s = 0.0
            for j in range(c):
                p = exp(s_reg[i, j] + u[i] + v[j])
                s += p
                row[j] += p
            if fabs(s - exp(log_a[i])) > violation:
                violation = fabs(s - exp(log_a[i]))
        for j in range(c):
            if fabs(row[j] - exp(log_b[j])) > violation:
                violation = fabs(row[j] - exp(log_b[j]))
        if violation < tol:
            break
    return u_arr, v_arr, it_run, violation
