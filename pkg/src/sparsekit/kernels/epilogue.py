"""Fused post-accumulation stages: bias, elementwise, activation, requant.

The fused path calls the very same stage functions the interpreter uses for
standalone ``bias_add``/``elementwise``/``relu``/``gelu`` nodes, which is what
makes fused and unfused execution bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sparsekit.errors import ConfigurationError, ShapeError
from sparsekit.kernels.activations import ACTIVATIONS
from sparsekit.tensor import QMAX, QuantParams

_I32 = np.iinfo(np.int32)


@dataclass(frozen=True)
class Requant:
    """Scales of the two int8 matmul operands and of the int8 result."""

    weight: QuantParams
    input: QuantParams
    output: QuantParams

    def combined(self, channels: int) -> np.ndarray:
        """Per-output-channel factor mapping the i32 accumulator to the output grid."""
        if self.input.mode != "per_tensor" or self.output.mode != "per_tensor":
            raise ConfigurationError("activation quantization must be per_tensor")
        return self.weight.channel_scales(channels) * float(self.input.scales[0]) / float(self.output.scales[0])

    def acc_scales(self, channels: int) -> np.ndarray:
        return self.weight.channel_scales(channels) * float(self.input.scales[0])


@dataclass(frozen=True)
class Epilogue:
    bias: np.ndarray | None = None
    elementwise: tuple[str, np.ndarray] | None = None  # ("add" | "mul", operand)
    activation: str | None = None  # "relu" | "gelu"
    requant: Requant | None = None

    def __post_init__(self):
        if self.elementwise is not None and self.elementwise[0] not in ("add", "mul"):
            raise ConfigurationError(f"unknown elementwise op {self.elementwise[0]!r}")
        if self.activation is not None and self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def empty(self) -> bool:
        return self.bias is None and self.elementwise is None and self.activation is None and self.requant is None


def _channel_view(vec, ndim, axis):
    shape = [1] * ndim
    shape[axis] = -1
    return vec.reshape(shape)


def bias_add(x: np.ndarray, bias: np.ndarray, axis: int = 0) -> np.ndarray:
    bias = np.asarray(bias)
    if bias.ndim != 1 or bias.size != x.shape[axis]:
        raise ShapeError(f"bias of length {bias.size} does not match extent {x.shape[axis]} on axis {axis}")
    if x.dtype == np.int32:
        out = x.astype(np.int64) + _channel_view(bias.astype(np.int64), x.ndim, axis)
        return _to_i32(out)
    return x + _channel_view(bias.astype(x.dtype), x.ndim, axis)


def elementwise(x: np.ndarray, y: np.ndarray, op: str) -> np.ndarray:
    y = np.asarray(y)
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise ShapeError(f"operand shape {y.shape} does not broadcast to {x.shape}") from None
    if np.broadcast_shapes(x.shape, y.shape) != x.shape:
        raise ShapeError(f"operand shape {y.shape} would grow accumulator {x.shape}")
    if x.dtype == np.int32:
        if y.dtype.kind not in "iu":
            raise ConfigurationError("integer accumulator needs an integer elementwise operand")
        a, b = x.astype(np.int64), y.astype(np.int64)
        return _to_i32(a + b if op == "add" else a * b)
    y = y.astype(x.dtype)
    if op == "add":
        return x + y
    if op == "mul":
        return x * y
    raise ConfigurationError(f"unknown elementwise op {op!r}")


def activation(x: np.ndarray, name: str) -> np.ndarray:
    if x.dtype == np.int32:
        if name != "relu":
            raise ConfigurationError(f"{name} is not available on integer accumulators")
        return np.maximum(x, 0)
    return ACTIVATIONS[name](x)


def _to_i32(a):
    if a.size and (a.min() < _I32.min or a.max() > _I32.max):
        raise ConfigurationError("int32 accumulator overflow in epilogue")
    return a.astype(np.int32)


def requantize(acc: np.ndarray, rq: Requant, axis: int = 0) -> np.ndarray:
    """``clamp(round_half_even(acc * combined_scale), -127, 127)`` as int8."""
    combined = _channel_view(rq.combined(acc.shape[axis]), acc.ndim, axis)
    q = np.rint(acc.astype(np.float64) * combined)
    return np.clip(q, -QMAX, QMAX).astype(np.int8)


def quantize_bias(bias: np.ndarray, rq: Requant) -> np.ndarray:
    """Float bias onto the accumulator grid ``weight_scale * input_scale``."""
    bias = np.asarray(bias)
    if bias.dtype.kind in "iu":
        return bias.astype(np.int32)
    q = np.rint(bias.astype(np.float64) / rq.acc_scales(bias.size))
    return _to_i32(q)


def apply_epilogue(acc: np.ndarray, ep: Epilogue, axis: int = 0) -> np.ndarray:
    """Apply stages in the fixed order bias -> elementwise -> activation -> requant.

    ``axis`` is the channel axis the bias runs along (0 for matmul rows, 1 for
    NCHW conv outputs).
    """
    is_int = acc.dtype == np.int32
    if is_int != (ep.requant is not None):
        raise ConfigurationError(
            "requant is required for int32 accumulators" if is_int else "requant given for a float accumulator"
        )
    out = acc
    if ep.bias is not None:
        bias = quantize_bias(ep.bias, ep.requant) if is_int else ep.bias
        out = bias_add(out, bias, axis)
    if ep.elementwise is not None:
        op, operand = ep.elementwise
        out = elementwise(out, operand, op)
    if ep.activation is not None:
        out = activation(out, ep.activation)
    if ep.requant is not None:
        out = requantize(out, ep.requant, axis)
    return out
