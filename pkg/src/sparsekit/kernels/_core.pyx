# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled inner loops.

Every kernel fills ``out[row_start:row_end]`` and accumulates each output row
in ascending stored-column order, the same order as ``_pycore``. Built without
FMA contraction, so f32 results match the fallback bit for bit.
"""
from libc.stdint cimport int8_t, int32_t, int64_t


def csr_spmm_f32(const int64_t[::1] row_ptr, const int32_t[::1] col_idx,
                 const float[::1] values, const float[:, ::1] x, float[:, ::1] out,
                 Py_ssize_t row_start, Py_ssize_t row_end):
    cdef Py_ssize_t i, p, j, c
    cdef Py_ssize_t n = x.shape[1]
    cdef float v
    with nogil:
        for i in range(row_start, row_end):
            for j in range(n):
                out[i, j] = 0.0
            for p in range(row_ptr[i], row_ptr[i + 1]):
                c = col_idx[p]
                v = values[p]
                for j in range(n):
                    out[i, j] = out[i, j] + v * x[c, j]


def csr_spmm_i32(const int64_t[::1] row_ptr, const int32_t[::1] col_idx,
                 const int8_t[::1] values, const int8_t[:, ::1] x, int32_t[:, ::1] out,
                 Py_ssize_t row_start, Py_ssize_t row_end):
    cdef Py_ssize_t i, p, j, c
    cdef Py_ssize_t n = x.shape[1]
    cdef int32_t v
    with nogil:
        for i in range(row_start, row_end):
            for j in range(n):
                out[i, j] = 0
            for p in range(row_ptr[i], row_ptr[i + 1]):
                c = col_idx[p]
                v = values[p]
                for j in range(n):
                    out[i, j] = out[i, j] + v * <int32_t>x[c, j]


def dense_matmul_f32(const float[:, ::1] w, const float[:, ::1] x, float[:, ::1] out,
                     Py_ssize_t row_start, Py_ssize_t row_end):
    cdef Py_ssize_t i, p, j
    cdef Py_ssize_t k = w.shape[1], n = x.shape[1]
    cdef float v
    with nogil:
        for i in range(row_start, row_end):
            for j in range(n):
                out[i, j] = 0.0
            for p in range(k):
                v = w[i, p]
                for j in range(n):
                    out[i, j] = out[i, j] + v * x[p, j]


def dense_matmul_i32(const int8_t[:, ::1] w, const int8_t[:, ::1] x, int32_t[:, ::1] out,
                     Py_ssize_t row_start, Py_ssize_t row_end):
    cdef Py_ssize_t i, p, j
    cdef Py_ssize_t k = w.shape[1], n = x.shape[1]
    cdef int32_t v
    with nogil:
        for i in range(row_start, row_end):
            for j in range(n):
                out[i, j] = 0
            for p in range(k):
                v = w[i, p]
                for j in range(n):
                    out[i, j] = out[i, j] + v * <int32_t>x[p, j]
