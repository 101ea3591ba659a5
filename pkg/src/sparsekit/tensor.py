"""Dense and compressed sparse weight types plus symmetric INT8 quantization.

Dense tensors are plain numpy arrays restricted to float32, int8 and int32.
Sparse weights only store their nonzeros:

* :class:`CsrWeight` - compressed sparse rows, the canonical format.
* :class:`BalancedWeight` - exactly ``k_per_row`` entries per row, so every
  row carries the same amount of work.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sparsekit.errors import InvariantError, ParameterError, ShapeError

QMAX = 127
DENSE_DTYPES = (np.float32, np.int8, np.int32)

PER_TENSOR = "per_tensor"
PER_CHANNEL = "per_channel"


def check_dense(a: np.ndarray) -> np.ndarray:
    """Validate the dense-tensor invariants and return ``a`` unchanged."""
    if a.dtype.type not in DENSE_DTYPES:
        raise ShapeError(f"unsupported dtype {a.dtype}")
    if any(d <= 0 for d in a.shape):
        raise ShapeError(f"extents must be positive, got {a.shape}")
    if a.dtype == np.int8 and a.size and int(a.min()) < -QMAX:
        raise InvariantError("int8 value -128 outside [-127, 127]")
    return a


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True, eq=False)
class CsrWeight:
    rows: int
    cols: int
    row_ptr: np.ndarray  # int64, rows + 1
    col_idx: np.ndarray  # int32, nnz
    values: np.ndarray  # float32 or int8, nnz
    zero_tol: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.ascontiguousarray(self.col_idx, dtype=np.int32))
        values = np.ascontiguousarray(self.values)
        if values.dtype not in (np.float32, np.int8):
            raise InvariantError(f"csr values must be float32 or int8, got {values.dtype}")
        object.__setattr__(self, "values", values)
        self.validate()
        _freeze(self.row_ptr, self.col_idx, self.values)

    def validate(self):
        rp, ci, v = self.row_ptr, self.col_idx, self.values
        if self.rows < 1 or self.cols < 1:
            raise InvariantError(f"bad extents {self.rows}x{self.cols}")
        if rp.shape != (self.rows + 1,):
            raise InvariantError("row_ptr must have rows + 1 entries")
        if rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise InvariantError("row_ptr must start at 0 and be nondecreasing")
        if rp[-1] != ci.size or ci.size != v.size:
            raise InvariantError("row_ptr[-1], col_idx and values disagree on nnz")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.cols:
                raise InvariantError("column index out of range")
            # strictly increasing within rows: every step is positive except at row starts
            steps = np.diff(ci.astype(np.int64))
            starts = np.zeros(ci.size, dtype=bool)
            starts[rp[:-1][rp[:-1] < ci.size]] = True
            if np.any(steps[~starts[1:]] <= 0):
                raise InvariantError("column indices must be strictly increasing within a row")
            if np.any(np.abs(v.astype(np.float64)) <= self.zero_tol):
                raise InvariantError(f"stored value with magnitude <= zero_tol={self.zero_tol}")
        if v.dtype == np.int8 and v.size and int(v.min()) < -QMAX:
            raise InvariantError("int8 value -128 outside [-127, 127]")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def dtype(self):
        return self.values.dtype

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.rows), np.diff(self.row_ptr))


@dataclass(frozen=True, eq=False)
class BalancedWeight:
    rows: int
    cols: int
    k_per_row: int
    col_idx: np.ndarray  # int32, rows x k
    values: np.ndarray  # float32 or int8, rows x k; zeros allowed as padding

    def __post_init__(self):
        ci = np.ascontiguousarray(self.col_idx, dtype=np.int32).reshape(self.rows, self.k_per_row)
        values = np.ascontiguousarray(self.values).reshape(self.rows, self.k_per_row)
        if values.dtype not in (np.float32, np.int8):
            raise InvariantError(f"balanced values must be float32 or int8, got {values.dtype}")
        object.__setattr__(self, "col_idx", ci)
        object.__setattr__(self, "values", values)
        if not 1 <= self.k_per_row <= self.cols:
            raise InvariantError(f"k_per_row={self.k_per_row} outside [1, {self.cols}]")
        if ci.min() < 0 or ci.max() >= self.cols:
            raise InvariantError("column index out of range")
        if self.k_per_row > 1 and np.any(np.diff(ci, axis=1) <= 0):
            raise InvariantError("column indices must be strictly increasing within a row")
        if values.dtype == np.int8 and int(values.min()) < -QMAX:
            raise InvariantError("int8 value -128 outside [-127, 127]")
        _freeze(ci, values)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        """Stored entries, padding included: this is the work the kernel does."""
        return self.rows * self.k_per_row

    @property
    def dtype(self):
        return self.values.dtype

    def as_csr_arrays(self):
        """(row_ptr, col_idx, values) views usable by the CSR kernels, padding kept."""
        row_ptr = np.arange(self.rows + 1, dtype=np.int64) * self.k_per_row
        return row_ptr, self.col_idx.reshape(-1), self.values.reshape(-1)


@dataclass(frozen=True)
class QuantParams:
    scales: np.ndarray = field(compare=False)
    mode: str = PER_TENSOR
    zero_point: int = 0

    def __post_init__(self):
        scales = np.atleast_1d(np.asarray(self.scales, dtype=np.float32))
        object.__setattr__(self, "scales", scales)
        if self.mode not in (PER_TENSOR, PER_CHANNEL):
            raise ParameterError(f"unknown quantization mode {self.mode!r}")
        if self.zero_point != 0:
            raise ParameterError("quantization is symmetric: zero_point must be 0")
        if scales.ndim != 1 or scales.size == 0 or not np.all(scales > 0):
            raise ParameterError("scales must be a nonempty vector of positive values")
        if self.mode == PER_TENSOR and scales.size != 1:
            raise ParameterError("per_tensor mode takes exactly one scale")

    def __eq__(self, other):
        return (
            isinstance(other, QuantParams)
            and self.mode == other.mode
            and np.array_equal(self.scales, other.scales)
        )

    def channel_scales(self, channels: int) -> np.ndarray:
        """Scales broadcast to one value per channel (float64)."""
        s = self.scales.astype(np.float64)
        if self.mode == PER_TENSOR:
            return np.full(channels, s[0])
        if s.size != channels:
            raise ShapeError(f"{s.size} per-channel scales for {channels} channels")
        return s


SparseWeight = CsrWeight | BalancedWeight


def csr_from_dense(m: np.ndarray, zero_tol: float = 0.0) -> CsrWeight:
    """Keep exactly the entries with ``|v| > zero_tol``, in row-major order."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"csr_from_dense needs a 2-D matrix, got shape {m.shape}")
    if zero_tol < 0:
        raise ParameterError("zero_tol must be >= 0")
    if m.dtype not in (np.float32, np.int8):
        m = m.astype(np.float32)
    keep = np.abs(m.astype(np.float64)) > zero_tol
    rows, cols = np.nonzero(keep)
    row_ptr = np.zeros(m.shape[0] + 1, dtype=np.int64)
    np.cumsum(keep.sum(axis=1), out=row_ptr[1:])
    return CsrWeight(m.shape[0], m.shape[1], row_ptr, cols, m[rows, cols], float(zero_tol))


def dense_from_csr(w: CsrWeight) -> np.ndarray:
    out = np.zeros(w.shape, dtype=w.dtype)
    out[w.row_indices(), w.col_idx] = w.values
    return out


def dense_from_balanced(w: BalancedWeight) -> np.ndarray:
    out = np.zeros(w.shape, dtype=w.dtype)
    out[np.arange(w.rows)[:, None], w.col_idx] = w.values
    return out


def to_dense(w) -> np.ndarray:
    if isinstance(w, CsrWeight):
        return dense_from_csr(w)
    if isinstance(w, BalancedWeight):
        return dense_from_balanced(w)
    return np.asarray(w)


def _topk_order(mag: np.ndarray) -> np.ndarray:
    # stable sort on -|v| puts larger magnitudes first, lower index first among ties
    return np.argsort(-mag, axis=-1, kind="stable")


def balanced_topk(m: np.ndarray, k_per_row: int) -> BalancedWeight:
    """Keep the ``k_per_row`` largest-magnitude entries of every row.

    Ties go to the lower column index. Rows with fewer than ``k`` nonzeros
    are padded with explicit zeros at the smallest unused columns, which the
    stable ordering yields automatically.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"balanced_topk needs a 2-D matrix, got shape {m.shape}")
    rows, cols = m.shape
    if not 1 <= k_per_row <= cols:
        raise ParameterError(f"k_per_row={k_per_row} outside [1, {cols}]")
    if m.dtype not in (np.float32, np.int8):
        m = m.astype(np.float32)
    order = _topk_order(np.abs(m.astype(np.float64)))[:, :k_per_row]
    col_idx = np.sort(order, axis=1)
    values = np.take_along_axis(m, col_idx, axis=1)
    return BalancedWeight(rows, cols, k_per_row, col_idx, values)


def quant_params(m: np.ndarray, mode: str = PER_TENSOR) -> QuantParams:
    """Symmetric scale ``max_abs / 127``; all-zero groups get scale 1.0.

    Per-channel groups are the rows (output channels) of a 2-D weight, or
    the leading axis in general.
    """
    a = np.abs(np.asarray(m, dtype=np.float64))
    if mode == PER_TENSOR:
        max_abs = np.array([a.max() if a.size else 0.0])
    elif mode == PER_CHANNEL:
        max_abs = a.reshape(a.shape[0], -1).max(axis=1)
    else:
        raise ParameterError(f"unknown quantization mode {mode!r}")
    scales = np.where(max_abs > 0, max_abs / QMAX, 1.0)
    return QuantParams(scales.astype(np.float32), mode)


def _scale_for(shape, p: QuantParams) -> np.ndarray:
    s = p.scales.astype(np.float64)
    if p.mode == PER_TENSOR:
        return s[0]
    if not shape or s.size != shape[0]:
        raise ShapeError(f"{s.size} per-channel scales do not match leading extent of {shape}")
    return s.reshape((-1,) + (1,) * (len(shape) - 1))


def quantize(m: np.ndarray, p: QuantParams) -> np.ndarray:
    """``clamp(round_half_even(v / scale), -127, 127)`` as int8."""
    m = np.asarray(m, dtype=np.float32)
    q = np.rint(m.astype(np.float64) / _scale_for(m.shape, p))
    return np.clip(q, -QMAX, QMAX).astype(np.int8)


def dequantize(q: np.ndarray, p: QuantParams) -> np.ndarray:
    q = np.asarray(q)
    return (q.astype(np.float64) * _scale_for(q.shape, p)).astype(np.float32)


def quantize_weight(w, p: QuantParams):
    """Quantize a dense or sparse f32 weight, keeping its storage format.

    Sparse entries that round to zero are dropped from CSR (a CSR never stores
    zeros) but kept as padding in the balanced layout.
    """
    if isinstance(w, CsrWeight):
        rows = w.row_indices()
        q = np.rint(w.values.astype(np.float64) / p.channel_scales(w.rows)[rows])
        q = np.clip(q, -QMAX, QMAX).astype(np.int8)
        dense = np.zeros(w.shape, dtype=np.int8)
        dense[rows, w.col_idx] = q
        return csr_from_dense(dense)
    if isinstance(w, BalancedWeight):
        q = np.rint(w.values.astype(np.float64) / p.channel_scales(w.rows)[:, None])
        q = np.clip(q, -QMAX, QMAX).astype(np.int8)
        return BalancedWeight(w.rows, w.cols, w.k_per_row, w.col_idx, q)
    return quantize(w, p)


def density(w) -> float:
    if isinstance(w, (CsrWeight, BalancedWeight)):
        nnz, numel = w.nnz, w.rows * w.cols
    else:
        a = np.asarray(w)
        nnz, numel = int(np.count_nonzero(a)), a.size
    return nnz / numel


def sparsity_factor(w) -> float:
    """``1 / density``; an all-zero weight reports ``inf``."""
    d = density(w)
    return math.inf if d == 0 else 1.0 / d
