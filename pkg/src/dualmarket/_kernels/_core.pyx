# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels.

Mirrors `dualmarket._kernels.pure` operation for operation: every output
element is accumulated from index 0 upward with one running sum, and the
transcendental maps call libm's tanh/exp, which is also what the math module
uses in the fallback. Compiled with -ffp-contract=off so no multiply-add
fusion can change a rounding step. The two backends therefore produce
bitwise-identical float64 results.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[1]
    if b.shape[0] != k:
        raise ValueError("matmul: inner dimensions differ")
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, kk
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for kk in range(k):
                acc = acc + a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out_arr


def matmul_at_b(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t r = a.shape[0], n = a.shape[1], m = b.shape[1]
    if b.shape[0] != r:
        raise ValueError("matmul_at_b: leading dimensions differ")
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, rr
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for rr in range(r):
                acc = acc + a[rr, i] * b[rr, j]
            out[i, j] = acc
    return out_arr


def matmul_a_bt(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[0]
    if b.shape[1] != k:
        raise ValueError("matmul_a_bt: trailing dimensions differ")
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, mm, j
    cdef double acc
    for i in range(n):
        for mm in range(m):
            acc = 0.0
            for j in range(k):
                acc = acc + a[i, j] * b[mm, j]
            out[i, mm] = acc
    return out_arr


def colsum(double[:, ::1] m):
    cdef Py_ssize_t r = m.shape[0], c = m.shape[1]
    out_arr = np.empty(c, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double acc
    for j in range(c):
        acc = 0.0
        for i in range(r):
            acc = acc + m[i, j]
        out[j] = acc
    return out_arr


def rowsum(double[:, ::1] m):
    cdef Py_ssize_t r = m.shape[0], c = m.shape[1]
    out_arr = np.empty(r, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(r):
        acc = 0.0
        for j in range(c):
            acc = acc + m[i, j]
        out[i] = acc
    return out_arr


def sum_all(double[:, ::1] m):
    cdef Py_ssize_t r = m.shape[0], c = m.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    for i in range(r):
        for j in range(c):
            acc = acc + m[i, j]
    return acc


def map_tanh(double[:, ::1] z):
    cdef Py_ssize_t r = z.shape[0], c = z.shape[1]
    out_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(r):
        for j in range(c):
            out[i, j] = tanh(z[i, j])
    return out_arr


def map_exp(double[:, ::1] z):
    cdef Py_ssize_t r = z.shape[0], c = z.shape[1]
    out_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(r):
        for j in range(c):
            out[i, j] = exp(z[i, j])
    return out_arr
