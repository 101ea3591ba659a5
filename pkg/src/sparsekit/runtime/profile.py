"""Per-node work counts that feed the performance model.

MACs: matmul ``m*k*n``, conv ``out_elems * in_ch * kh * kw``. Vector op
counts are element counts, with three passes for softmax (max, exp,
normalize) and three for layer_norm (mean, variance, normalize + affine).
With ``fuse=True`` epilogue chains cost nothing beyond their matmul, as on a
sparse unit with fused bias/elementwise/activation stages. Intermediate
activations are assumed to stay on chip unless ``offchip_intermediates``.
"""
from __future__ import annotations

import math

from sparsekit.perf import CONV, MATMUL, VECTOR, OpProfile
from sparsekit.runtime.graph import OpGraph, shape_infer
from sparsekit.runtime.interpreter import plan_fusion
from sparsekit.tensor import density

_VECTOR_PASSES = {"softmax": 3, "layer_norm": 3}


def profile(g: OpGraph, store=None, batch: int = 1, *, fuse: bool = True, elem_bytes: int = 1,
            offchip_intermediates: bool = False) -> list[OpProfile]:
    shapes = shape_infer(g, store)
    groups = plan_fusion(g, shapes) if fuse else {}
    absorbed = {nid for chain in groups.values() for nid in chain[1:]}
    group_of = {chain[0]: tail for tail, chain in groups.items()}
    outputs = set(g.outputs)

    def numel(name):
        return math.prod(shapes[name])

    def offchip(name):
        return offchip_intermediates or name in g.input_names or name in outputs

    profiles = []
    for nid in g.order:
        n = g.by_id[nid]
        if n.is_matmul:
            out_id = group_of.get(nid, nid)
            act = sum(numel(i) for i in n.inputs if offchip(i))
            act += numel(out_id) if offchip(out_id) else 0
            if n.kind == "conv2d":
                spec = n.conv_spec(shapes[n.inputs[0]][1])
                macs = numel(nid) * spec.in_channels * spec.kernel_h * spec.kernel_w
                wbytes = math.prod(spec.weight_shape) * elem_bytes
                kind = CONV
            elif n.weight:
                k, cols = shapes[n.inputs[0]]
                macs = n.attrs["out_features"] * k * cols
                wbytes = n.attrs["out_features"] * k * elem_bytes
                kind = MATMUL
            else:
                a, b = (shapes[i] for i in n.inputs)
                inner = a[0] if n.attrs.get("transpose_a") else a[1]
                macs = numel(nid) * inner
                wbytes = 0
                kind = MATMUL
            d = density(store[n.weight]) if (store is not None and n.weight) else 1.0
            profiles.append(OpProfile(nid, kind, macs * batch, 0, wbytes, act * elem_bytes * batch,
                                      max(d, 1e-12), prunable=bool(n.weight)))
        elif nid in absorbed:
            continue
        else:
            count = numel(nid) * _VECTOR_PASSES.get(n.kind, 1)
            profiles.append(OpProfile(nid, VECTOR, 0, count * batch, 0, 0, None))
    return profiles
