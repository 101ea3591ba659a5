"""Pure numpy fallback with the same signatures as the compiled ``_core``.

Rows are advanced in lockstep: step ``t`` adds the ``t``-th stored entry of
every row that has one. Each row still sees its entries in ascending column
order, so results equal the sequential loop exactly.
"""
import numpy as np


def _csr_lockstep(row_ptr, col_idx, values, x, out, row_start, row_end, acc_dtype):
    rows = np.arange(row_start, row_end)
    starts = row_ptr[row_start:row_end]
    counts = row_ptr[row_start + 1:row_end + 1] - starts
    acc = np.zeros((row_end - row_start, x.shape[1]), dtype=acc_dtype)
    xw = x.astype(acc_dtype, copy=False)
    for t in range(int(counts.max()) if counts.size else 0):
        live = np.nonzero(counts > t)[0]
        p = starts[live] + t
        v = values[p].astype(acc_dtype)[:, None]
        acc[live] += v * xw[col_idx[p]]
    out[rows] = acc


def csr_spmm_f32(row_ptr, col_idx, values, x, out, row_start, row_end):
    _csr_lockstep(row_ptr, col_idx, values, x, out, row_start, row_end, np.float32)


def csr_spmm_i32(row_ptr, col_idx, values, x, out, row_start, row_end):
    _csr_lockstep(row_ptr, col_idx, values, x, out, row_start, row_end, np.int32)


def _dense(w, x, out, row_start, row_end, acc_dtype):
    ws = w[row_start:row_end].astype(acc_dtype, copy=False)
    xw = x.astype(acc_dtype, copy=False)
    acc = np.zeros((row_end - row_start, x.shape[1]), dtype=acc_dtype)
    for p in range(w.shape[1]):
        acc += ws[:, p:p + 1] * xw[p]
    out[row_start:row_end] = acc


def dense_matmul_f32(w, x, out, row_start, row_end):
    _dense(w, x, out, row_start, row_end, np.float32)


def dense_matmul_i32(w, x, out, row_start, row_end):
    _dense(w, x, out, row_start, row_end, np.int32)
