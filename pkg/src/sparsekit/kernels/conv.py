"""2-D convolution (NCHW) lowered to the sparse matmul via im2col."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sparsekit.errors import ShapeError
from sparsekit.kernels.epilogue import Epilogue, apply_epilogue
from sparsekit.kernels.matmul import matmul


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w, self.stride) < 1 or self.padding < 0:
            raise ShapeError(f"invalid conv spec {self}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv output would be empty for input {h}x{w} with {self}")
        return oh, ow

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.out_channels, self.in_channels * self.kernel_h * self.kernel_w)


def _check_input(x, spec):
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv input must be NCHW with C={spec.in_channels}, got {x.shape}")


def im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Patch matrix of shape ``(C*kh*kw, N*oh*ow)``; rows ordered (c, ky, kx)."""
    _check_input(x, spec)
    n, c, h, w = x.shape
    oh, ow = spec.out_hw(h, w)
    p, s = spec.padding, spec.stride
    img = np.pad(x, [(0, 0), (0, 0), (p, p), (p, p)])
    cols = np.empty((c, spec.kernel_h, spec.kernel_w, n, oh, ow), dtype=x.dtype)
    for ky in range(spec.kernel_h):
        for kx in range(spec.kernel_w):
            patch = img[:, :, ky:ky + s * oh:s, kx:kx + s * ow:s]
            cols[:, ky, kx] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * spec.kernel_h * spec.kernel_w, n * oh * ow)


def conv2d_acc(x: np.ndarray, w, spec: ConvSpec) -> np.ndarray:
    """Raw accumulator (f32, or i32 for int8 operands) in NCHW layout."""
    if tuple(w.shape) != spec.weight_shape:
        raise ShapeError(f"conv weight shape {tuple(w.shape)} != expected {spec.weight_shape}")
    n, _, h, wd = x.shape if x.ndim == 4 else (0, 0, 0, 0)
    cols = im2col(x, spec)
    oh, ow = spec.out_hw(h, wd)
    acc = matmul(w, cols)
    return acc.reshape(spec.out_channels, n, oh, ow).transpose(1, 0, 2, 3).copy()


def conv2d_sparse(x: np.ndarray, w, spec: ConvSpec, ep: Epilogue = Epilogue()) -> np.ndarray:
    """Convolution with a (usually sparse) ``[out_ch, in_ch*kh*kw]`` weight.

    The epilogue bias runs along the channel axis; an elementwise operand must
    broadcast against the NCHW output.
    """
    acc = conv2d_acc(np.asarray(x), w, spec)
    return acc if ep.empty else apply_epilogue(acc, ep, axis=1)


def conv2d_ref(x: np.ndarray, w_dense: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Direct dense convolution in float64, the correctness reference.

    ``w_dense`` may be ``[out, in, kh, kw]`` or the flattened 2-D layout.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, spec)
    w4 = np.asarray(w_dense, dtype=np.float64).reshape(
        spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w
    )
    n, c, h, wd = x.shape
    oh, ow = spec.out_hw(h, wd)
    p, s = spec.padding, spec.stride
    out = np.zeros((n, spec.out_channels, oh, ow))
    for b in range(n):
        for o in range(spec.out_channels):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(spec.kernel_h):
                            yy = i * s + ky - p
                            if not 0 <= yy < h:
                                continue
                            for kx in range(spec.kernel_w):
                                xx = j * s + kx - p
                                if 0 <= xx < wd:
                                    acc += w4[o, ci, ky, kx] * x[b, ci, yy, xx]
                    out[b, o, i, j] = acc
    return out
