# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: causal linear-attention scan and causal softmax rows.

Signatures mirror ``_kernels_py``; inputs are C-contiguous float64 arrays.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def linear_scan(const double[:, ::1] phi_q, const double[:, ::1] phi_k,
                const double[:, ::1] v, double eps):
    cdef Py_ssize_t L = phi_q.shape[0]
    cdef Py_ssize_t M = phi_q.shape[1]
    cdef Py_ssize_t dv = v.shape[1]
    cdef Py_ssize_t i, m, c
    cdef double den, pk, pq
    cdef bint clamped = False

    out_arr = np.zeros((L, dv), dtype=np.float64)
    a_arr = np.zeros(M, dtype=np.float64)
    b_arr = np.zeros((M, dv), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] a = a_arr
    cdef double[:, ::1] b = b_arr

    with nogil:
        for i in range(L):
            den = 0.0
            for m in range(M):
                pk = phi_k[i, m]
                a[m] += pk
                for c in range(dv):
                    b[m, c] += pk * v[i, c]
            for m in range(M):
                pq = phi_q[i, m]
                den += a[m] * pq
                for c in range(dv):
                    out[i, c] += b[m, c] * pq
            if den < eps:
                den = eps
                clamped = True
            for c in range(dv):
                out[i, c] /= den
    return out_arr, bool(clamped)


def causal_softmax(const double[:, ::1] q, const double[:, ::1] k,
                   const double[:, ::1] v, double scale):
    cdef Py_ssize_t L = q.shape[0]
    cdef Py_ssize_t d = q.shape[1]
    cdef Py_ssize_t dv = v.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double s, mx, total, w

    out_arr = np.zeros((L, dv), dtype=np.float64)
    logits_arr = np.empty(L, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] logits = logits_arr

    with nogil:
        for i in range(L):
            mx = -1e308
            for j in range(i + 1):
                s = 0.0
                for c in range(d):
                    s += q[i, c] * k[j, c]
                s *= scale
                logits[j] = s
                if s > mx:
                    mx = s
            total = 0.0
            for j in range(i + 1):
                w = exp(logits[j] - mx)
                total += w
                for c in range(dv):
                    out[i, c] += w * v[j, c]
            for c in range(dv):
                out[i, c] /= total
    return out_arr
