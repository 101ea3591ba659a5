"""Activation-engine function set.

All functions are elementwise or along one axis and keep float32 in,
float32 out. ``log`` and ``reciprocal`` raise :class:`DomainError` instead of
returning nan/inf.
"""
import math

import numpy as np

from sparsekit.errors import DomainError

_GELU_C = np.float32(math.sqrt(2.0 / math.pi))
_GELU_K = np.float32(0.044715)
_HALF = np.float32(0.5)
_ONE = np.float32(1.0)


def _f32(x):
    return np.asarray(x, dtype=np.float32)


def relu(x):
    x = np.asarray(x)
    return np.maximum(x, np.zeros((), dtype=x.dtype))


def gelu(x):
    """tanh approximation; within 1e-3 of the erf form and exactly 0 at 0."""
    x = _f32(x)
    return _HALF * x * (_ONE + np.tanh(_GELU_C * (x + _GELU_K * x * x * x)))


def gelu_grad(x):
    """d gelu / dx for the tanh approximation (float64, used by the trainer)."""
    x = np.asarray(x, dtype=np.float64)
    c, k = math.sqrt(2.0 / math.pi), 0.044715
    u = c * (x + k * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x)


def exp(x):
    return np.exp(_f32(x))


def log(x):
    x = _f32(x)
    if np.any(~(x > 0)):
        raise DomainError("log requires x > 0")
    return np.log(x)


def reciprocal(x):
    x = _f32(x)
    if np.any(x == 0):
        raise DomainError("reciprocal of 0")
    return np.reciprocal(x)


def softmax(v, axis=-1):
    v = _f32(v)
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def _along(param, ndim, axis):
    shape = [1] * ndim
    shape[axis] = -1
    return _f32(param).reshape(shape)


def layer_norm(v, gamma, beta, eps=1e-5, axis=-1):
    """Normalize along ``axis`` with population variance, eps inside the sqrt."""
    v = _f32(v)
    axis = axis % v.ndim
    mean = v.mean(axis=axis, keepdims=True)
    var = ((v - mean) ** 2).mean(axis=axis, keepdims=True)
    y = (v - mean) / np.sqrt(var + np.float32(eps))
    return y * _along(gamma, v.ndim, axis) + _along(beta, v.ndim, axis)


ACTIVATIONS = {"relu": relu, "gelu": gelu}
