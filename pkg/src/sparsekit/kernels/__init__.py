"""Sparse matmul/conv kernels, fused epilogues and the activation engine.

The hot loops live in a compiled extension (``_core``) with a numpy fallback
(``_pycore``) chosen at import; see :func:`backend_name`.
"""
from sparsekit.kernels._backend import (
    BACKENDS,
    backend_name,
    count_macs,
    get_backend,
    num_threads,
    use_backend,
)
from sparsekit.kernels.activations import exp, gelu, layer_norm, log, reciprocal, relu, softmax
from sparsekit.kernels.conv import ConvSpec, conv2d_acc, conv2d_ref, conv2d_sparse, im2col
from sparsekit.kernels.epilogue import (
    Epilogue,
    Requant,
    activation,
    apply_epilogue,
    bias_add,
    elementwise,
    requantize,
)
from sparsekit.kernels.matmul import MAX_I8_DEPTH, dense_matmul, matmul, spmm_f32, spmm_i8, spmm_i32

__all__ = [
    "BACKENDS",
    "MAX_I8_DEPTH",
    "ConvSpec",
    "Epilogue",
    "Requant",
    "activation",
    "apply_epilogue",
    "backend_name",
    "bias_add",
    "conv2d_acc",
    "conv2d_ref",
    "conv2d_sparse",
    "count_macs",
    "dense_matmul",
    "elementwise",
    "exp",
    "gelu",
    "get_backend",
    "im2col",
    "layer_norm",
    "log",
    "matmul",
    "num_threads",
    "reciprocal",
    "relu",
    "requantize",
    "softmax",
    "spmm_f32",
    "spmm_i8",
    "spmm_i32",
    "use_backend",
]
