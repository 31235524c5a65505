# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the routines in ``_kernels_py``."""
import numpy as np
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dsymv


def ard_cross(const double[:, ::1] A, const double[:, ::1] B,
              const double[::1] inv_ls2, double sf2):
    cdef Py_ssize_t m = A.shape[0], q = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, s
    cdef double acc, diff
    out = np.empty((m, q))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(q):
                acc = 0.0
                for s in range(d):
                    diff = A[i, s] - B[j, s]
                    acc = acc + diff * diff * inv_ls2[s]
                o[i, j] = sf2 * exp(-0.5 * acc)
    return out


def ard_cross_grad(const double[:, ::1] T, const double[:, ::1] Q,
                   const double[::1] c, const double[::1] inv_ls2, double sf2):
    cdef Py_ssize_t m = T.shape[0], q = Q.shape[0], d = T.shape[1]
    cdef Py_ssize_t i, j, s
    cdef double acc, diff, w
    kc_arr = np.zeros(m)
    grad_arr = np.zeros((m, d))
    cdef double[::1] kc = kc_arr
    cdef double[:, ::1] g = grad_arr
    with nogil:
        for i in range(m):
            for j in range(q):
                acc = 0.0
                for s in range(d):
                    diff = Q[j, s] - T[i, s]
                    acc = acc + diff * diff * inv_ls2[s]
                w = c[j] * sf2 * exp(-0.5 * acc)
                kc[i] = kc[i] + w
                for s in range(d):
                    g[i, s] = g[i, s] + w * (Q[j, s] - T[i, s])
            for s in range(d):
                g[i, s] = g[i, s] * inv_ls2[s]
    return kc_arr, grad_arr


def lml_grad_terms(const double[:, ::1] X, const double[:, ::1] M):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, s
    cdef double diff, mij
    out_arr = np.zeros(d)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                mij = M[i, j]
                for s in range(d):
                    diff = X[i, s] - X[j, s]
                    out[s] = out[s] + mij * diff * diff
        for s in range(d):
            out[s] = 2.0 * out[s]
    return out_arr


def fix_terms(const double[::1] z, const double[:, ::1] Q, const double[::1] L,
              const double[::1] s0, const double[::1] s0p, const double[::1] wv,
              const double[::1] bX, const double[:, ::1] Kinv, bint gradient):
    cdef int n = Q.shape[0], p = Q.shape[1], one = 1
    cdef Py_ssize_t j, s
    cdef double acc, diff, sum_wv = 0.0, expl = 0.0, sum_p = 0.0, a = 1.0, b0 = 0.0
    e_arr = np.empty(n)
    r_arr = np.empty(n)
    beta_arr = np.zeros(n)
    cdef double[::1] e = e_arr, r = r_arr, beta = beta_arr
    with nogil:
        for j in range(n):
            acc = 0.0
            for s in range(p):
                diff = z[s] - Q[j, s]
                acc = acc + diff * diff * L[s]
            e[j] = exp(-0.5 * acc)
            sum_wv = sum_wv + s0[j] * e[j] * wv[j]
            sum_p = sum_p + s0p[j] * e[j]
            r[j] = s0[j] * e[j] - bX[j]
        if n > 0:
            dsymv(b"U", &n, &a, <double*>&Kinv[0, 0], &n, &r[0], &one, &b0, &beta[0], &one)
        for j in range(n):
            expl = expl + r[j] * beta[j]
    if not gradient:
        return sum_wv, expl, sum_p, None, None, None
    g_wv_arr = np.zeros(p)
    g_ex_arr = np.zeros(p)
    g_p_arr = np.zeros(p)
    cdef double[::1] g_wv = g_wv_arr, g_ex = g_ex_arr, g_p = g_p_arr
    cdef double bj
    with nogil:
        for j in range(n):
            bj = s0[j] * e[j]
            for s in range(p):
                diff = z[s] - Q[j, s]
                g_wv[s] = g_wv[s] - bj * wv[j] * diff
                g_ex[s] = g_ex[s] - 2.0 * bj * beta[j] * diff
                g_p[s] = g_p[s] - s0p[j] * e[j] * diff
        for s in range(p):
            g_wv[s] = g_wv[s] * L[s]
            g_ex[s] = g_ex[s] * L[s]
            g_p[s] = g_p[s] * L[s]
    return sum_wv, expl, sum_p, g_wv_arr, g_ex_arr, g_p_arr
