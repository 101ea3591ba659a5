"""Named weight store and its SPW1 binary container.

SPW1 layout (all integers little-endian)::

    b"SPW1" | u32 version=1 | u32 count
    per tensor:
      u16 name_len | name (UTF-8) | u8 dtype (0=f32, 1=i8) | u8 format (0=dense, 1=csr, 2=balanced)
      u8 ndim | ndim x u64 dims
      dense:    prod(dims) values, row-major
      csr:      u64 nnz | (rows+1) x u64 row_ptr | nnz x u32 col_idx | nnz values
      balanced: u32 k_per_row | rows*k x u32 col_idx | rows*k values
      u8 quant flag; if 1: u8 mode (0=per_tensor, 1=per_channel) | scales as f32
                    (1 scale, or dims[0] scales)

CSR ``zero_tol`` is not stored; loaded CSR weights have ``zero_tol = 0``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from sparsekit.errors import FormatError, InvariantError, ShapeError, ValidationError
from sparsekit.tensor import PER_CHANNEL, PER_TENSOR, BalancedWeight, CsrWeight, QuantParams, check_dense

MAGIC = b"SPW1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.int8): 1}
DENSE, CSR, BALANCED = 0, 1, 2
_MODES = {0: PER_TENSOR, 1: PER_CHANNEL}


class WeightStore:
    """Ordered mapping ``name -> dense array | CsrWeight | BalancedWeight`` with
    optional per-tensor :class:`QuantParams`."""

    def __init__(self, tensors=None, quant=None):
        self.tensors: dict = {}
        self.quant: dict[str, QuantParams] = {}
        for name, t in (tensors or {}).items():
            self.add(name, t, (quant or {}).get(name))

    def add(self, name: str, tensor, quant: QuantParams | None = None):
        if not isinstance(tensor, (CsrWeight, BalancedWeight)):
            tensor = check_dense(np.ascontiguousarray(tensor))
        if quant is not None and quant.mode == PER_CHANNEL and quant.scales.size != tensor.shape[0]:
            raise ShapeError(f"{name}: {quant.scales.size} channel scales for leading extent {tensor.shape[0]}")
        self.tensors[name] = tensor
        if quant is not None:
            self.quant[name] = quant
        else:
            self.quant.pop(name, None)

    def __contains__(self, name):
        return name in self.tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def shape(self, name) -> tuple[int, ...]:
        return tuple(self.tensors[name].shape)

    def copy(self) -> WeightStore:
        return WeightStore(dict(self.tensors), dict(self.quant))


def _dims(t):
    return tuple(int(d) for d in t.shape)


def save_weights(store: WeightStore) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, t in store.items():
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ValidationError(f"tensor name too long: {name[:40]}...")
        dtype = np.dtype(t.dtype)
        if dtype not in _DTYPE_CODES:
            raise ValidationError(f"{name}: SPW1 stores f32 or i8 only, got {dtype}")
        fmt = CSR if isinstance(t, CsrWeight) else BALANCED if isinstance(t, BalancedWeight) else DENSE
        dims = _dims(t)
        out.append(struct.pack("<H", len(raw_name)) + raw_name)
        out.append(struct.pack("<BBB", _DTYPE_CODES[dtype], fmt, len(dims)))
        out.append(np.asarray(dims, dtype="<u8").tobytes())
        le = _DTYPES[_DTYPE_CODES[dtype]]
        if fmt == DENSE:
            out.append(np.ascontiguousarray(t, dtype=le).tobytes())
        elif fmt == CSR:
            out.append(struct.pack("<Q", t.nnz))
            out.append(t.row_ptr.astype("<u8").tobytes())
            out.append(t.col_idx.astype("<u4").tobytes())
            out.append(t.values.astype(le).tobytes())
        else:
            out.append(struct.pack("<I", t.k_per_row))
            out.append(t.col_idx.astype("<u4").tobytes())
            out.append(t.values.astype(le).tobytes())
        q = store.quant.get(name)
        if q is None:
            out.append(b"\x00")
        else:
            out.append(struct.pack("<BB", 1, 0 if q.mode == PER_TENSOR else 1))
            out.append(q.scales.astype("<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated payload: need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()


def load_weights(data: bytes) -> WeightStore:
    r = _Reader(bytes(data))
    if bytes(r.take(4)) != MAGIC:
        raise FormatError("bad magic: not an SPW1 weight file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported SPW1 version {version}")
    store = WeightStore()
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = bytes(r.take(name_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8") from None
        if name in store:
            raise InvariantError(f"duplicate tensor name {name!r}")
        dtype_code, fmt, ndim = r.unpack("<BBB")
        if dtype_code not in _DTYPES:
            raise FormatError(f"{name}: unknown dtype code {dtype_code}")
        le = _DTYPES[dtype_code]
        native = np.float32 if dtype_code == 0 else np.int8
        dims = tuple(int(d) for d in r.array("<u8", ndim))
        if any(d == 0 for d in dims):
            raise InvariantError(f"{name}: zero extent in {dims}")
        try:
            if fmt == DENSE:
                t = r.array(le, int(np.prod(dims, dtype=np.int64))).astype(native).reshape(dims)
            elif fmt in (CSR, BALANCED):
                if ndim != 2:
                    raise InvariantError(f"{name}: sparse tensors must be 2-D, got {ndim}-D")
                rows, cols = dims
                if fmt == CSR:
                    (nnz,) = r.unpack("<Q")
                    row_ptr = r.array("<u8", rows + 1).astype(np.int64)
                    col_idx = r.array("<u4", nnz)
                    values = r.array(le, nnz).astype(native)
                    if col_idx.size and col_idx.max() >= cols:
                        raise InvariantError(f"{name}: column index out of range")
                    t = CsrWeight(rows, cols, row_ptr, col_idx.astype(np.int32), values)
                else:
                    (k,) = r.unpack("<I")
                    if not 1 <= k <= cols:
                        raise InvariantError(f"{name}: k_per_row={k} outside [1, {cols}]")
                    col_idx = r.array("<u4", rows * k)
                    values = r.array(le, rows * k).astype(native)
                    if col_idx.max() >= cols:
                        raise InvariantError(f"{name}: column index out of range")
                    t = BalancedWeight(rows, cols, k, col_idx.astype(np.int32), values)
            else:
                raise FormatError(f"{name}: unknown format code {fmt}")
            (flag,) = r.unpack("<B")
            quant = None
            if flag == 1:
                (mode_code,) = r.unpack("<B")
                if mode_code not in _MODES:
                    raise FormatError(f"{name}: unknown quantization mode {mode_code}")
                n_scales = 1 if mode_code == 0 else dims[0]
                quant = QuantParams(r.array("<f4", n_scales).astype(np.float32), _MODES[mode_code])
            elif flag != 0:
                raise FormatError(f"{name}: bad quant flag {flag}")
            store.add(name, t, quant)
        except InvariantError:
            raise
        except (ShapeError, ValidationError) as exc:
            raise InvariantError(f"{name}: {exc}") from None
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after the last tensor")
    return store


def read_weights(path) -> WeightStore:
    return load_weights(Path(path).read_bytes())


def write_weights(path, store: WeightStore):
    Path(path).write_bytes(save_weights(store))
