"""Sparse x dense and dense x dense matrix products with fused epilogues."""
from __future__ import annotations

import numpy as np

from sparsekit.errors import ConfigurationError, ShapeError
from sparsekit.kernels._backend import get_backend, record_macs, run_rows
from sparsekit.kernels.epilogue import Epilogue, apply_epilogue
from sparsekit.tensor import BalancedWeight, CsrWeight

# 127 * 127 * 2**16 < 2**31 - 1: no i32 accumulator can overflow below this depth
MAX_I8_DEPTH = 1 << 16
_EMPTY = Epilogue()


def _csr_arrays(w):
    if isinstance(w, CsrWeight):
        return w.row_ptr, w.col_idx, w.values
    if isinstance(w, BalancedWeight):
        return w.as_csr_arrays()
    raise TypeError(f"expected a sparse weight, got {type(w).__name__}")


def _check_operands(w_shape, x):
    if x.ndim != 2:
        raise ShapeError(f"right operand must be 2-D, got shape {x.shape}")
    if w_shape[1] != x.shape[0]:
        raise ShapeError(f"inner extents differ: weight {w_shape} x input {x.shape}")


def _spmm_acc(w, x, out_dtype, kernel_name):
    row_ptr, col_idx, values = _csr_arrays(w)
    out = np.empty((w.rows, x.shape[1]), dtype=out_dtype)
    work = values.size * x.shape[1]
    run_rows(getattr(get_backend(), kernel_name), w.rows, work, row_ptr, col_idx, values, x, out)
    record_macs(work)
    return out


def spmm_f32(w: CsrWeight | BalancedWeight, x: np.ndarray, ep: Epilogue = _EMPTY) -> np.ndarray:
    """``ep(W @ X)`` for a sparse f32 weight and dense f32 ``X``.

    Each output row accumulates its stored entries in ascending column order,
    so the result is bit-reproducible under any thread count.
    """
    if w.dtype != np.float32:
        raise ConfigurationError("spmm_f32 needs a float32 weight")
    x = np.ascontiguousarray(x, dtype=np.float32)
    _check_operands(w.shape, x)
    acc = _spmm_acc(w, x, np.float32, "csr_spmm_f32")
    return acc if ep.empty else apply_epilogue(acc, ep)


def spmm_i32(w: CsrWeight | BalancedWeight, x: np.ndarray) -> np.ndarray:
    """Exact int32 accumulator of an int8 sparse weight times int8 ``X``."""
    if w.dtype != np.int8 or np.asarray(x).dtype != np.int8:
        raise ConfigurationError("spmm_i8 needs int8 weight and int8 input")
    x = np.ascontiguousarray(x)
    _check_operands(w.shape, x)
    if w.cols > MAX_I8_DEPTH:
        raise ConfigurationError(f"reduction depth {w.cols} exceeds {MAX_I8_DEPTH}; int32 could overflow")
    return _spmm_acc(w, x, np.int32, "csr_spmm_i32")


def spmm_i8(w: CsrWeight | BalancedWeight, x: np.ndarray, ep: Epilogue) -> np.ndarray:
    """int8 product: exact i32 accumulation, i32 bias, then requantization to int8."""
    if ep is None or ep.requant is None:
        raise ConfigurationError("spmm_i8 requires requant parameters in the epilogue")
    return apply_epilogue(spmm_i32(w, x), ep)


def dense_matmul(w: np.ndarray, x: np.ndarray, ep: Epilogue = _EMPTY) -> np.ndarray:
    """Dense product with the same per-row accumulation order as the sparse kernel.

    float32 operands accumulate in float32; int8 operands give an int32
    accumulator (an int8 requant epilogue is then mandatory).
    """
    w = np.ascontiguousarray(w)
    x = np.ascontiguousarray(x)
    if w.ndim != 2:
        raise ShapeError(f"left operand must be 2-D, got shape {w.shape}")
    _check_operands(w.shape, x)
    if w.dtype == np.int8 and x.dtype == np.int8:
        if w.shape[1] > MAX_I8_DEPTH:
            raise ConfigurationError(f"reduction depth {w.shape[1]} exceeds {MAX_I8_DEPTH}")
        out_dtype, kernel = np.int32, "dense_matmul_i32"
    else:
        w, x = w.astype(np.float32, copy=False), x.astype(np.float32, copy=False)
        out_dtype, kernel = np.float32, "dense_matmul_f32"
    out = np.empty((w.shape[0], x.shape[1]), dtype=out_dtype)
    work = w.shape[0] * w.shape[1] * x.shape[1]
    run_rows(getattr(get_backend(), kernel), w.shape[0], work, w, x, out)
    record_macs(work)
    return out if ep.empty else apply_epilogue(out, ep)


def matmul(w, x: np.ndarray, ep: Epilogue = _EMPTY) -> np.ndarray:
    """Dispatch on the weight's storage format and dtype."""
    if isinstance(w, (CsrWeight, BalancedWeight)):
        if w.dtype == np.int8:
            return spmm_i8(w, x, ep) if ep.requant is not None else spmm_i32(w, x)
        return spmm_f32(w, x, ep)
    return dense_matmul(w, x, ep)
