"""Reference-order graph executor, epilogue fusion planning and profiling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sparsekit.errors import ConfigurationError, ShapeError
from sparsekit.kernels import (
    Epilogue,
    Requant,
    activation,
    apply_epilogue,
    bias_add,
    conv2d_acc,
    conv2d_sparse,
    dense_matmul,
    elementwise,
    layer_norm,
    matmul,
    softmax,
)
from sparsekit.runtime.graph import Node, OpGraph, graph_from_dict, shape_infer
from sparsekit.runtime.store import WeightStore
from sparsekit.tensor import (
    BalancedWeight,
    CsrWeight,
    QuantParams,
    balanced_topk,
    csr_from_dense,
    dequantize,
    quant_params,
    quantize,
    quantize_weight,
    to_dense,
)
from sparsekit.sparsify.schedule import kept_count, magnitude_mask

PRECISIONS = ("f32", "i8")


@dataclass
class QTensor:
    """int8 activation with its per-tensor scale."""

    q: np.ndarray
    scale: float

    @property
    def shape(self):
        return self.q.shape


def _f32(v) -> np.ndarray:
    if isinstance(v, QTensor):
        return dequantize(v.q, QuantParams([v.scale]))
    return v


def _default_bias_axis(ndim):
    return 1 if ndim == 4 else 0


# --------------------------------------------------------------------------- fusion

_STAGE = {"bias_add": 0, "elementwise": 1, "relu": 2, "gelu": 2}


def plan_fusion(g: OpGraph, shapes=None) -> dict[str, list[str]]:
    """Epilogue-compatible chains ``matmul|conv2d -> bias_add -> elementwise -> relu|gelu``.

    Stages may be skipped but not reordered. Every absorbed intermediate has
    a single consumer and is not a graph output. Returns ``tail_id -> chain``.
    """
    shapes = shapes or shape_infer(g)
    consumers = g.consumers()
    outputs = set(g.outputs)
    groups = {}
    for head in g.nodes:
        if not head.is_matmul:
            continue
        chain, stage, cur = [head.id], -1, head.id
        while cur not in outputs and len(consumers[cur]) == 1:
            nxt = g.by_id[consumers[cur][0]]
            s = _STAGE.get(nxt.kind)
            if s is None or s <= stage:
                break
            if nxt.kind == "bias_add":
                ndim = len(shapes[cur])
                if nxt.attrs.get("axis", _default_bias_axis(ndim)) % ndim != _default_bias_axis(ndim):
                    break
            if nxt.kind == "elementwise":
                other = [i for i in nxt.inputs if i != cur]
                if len(other) != 1 or other[0] in chain:
                    break
            chain.append(nxt.id)
            stage, cur = s, nxt.id
        if len(chain) > 1:
            groups[chain[-1]] = chain
    return groups


# --------------------------------------------------------------------------- execution


class _Weights:
    """Per-run cache of weights converted to the representation a kernel needs."""

    def __init__(self, store: WeightStore):
        self.store = store
        self._f32 = {}
        self._i8 = {}

    def f32(self, name):
        if name not in self._f32:
            t = self.store[name]
            if t.dtype == np.int8:
                q = self.store.quant.get(name)
                if q is None:
                    raise ConfigurationError(f"missing quant params for int8 weight {name!r}")
                if isinstance(t, CsrWeight):
                    rows = t.row_indices()
                    vals = (t.values.astype(np.float64) * q.channel_scales(t.rows)[rows]).astype(np.float32)
                    t = CsrWeight(t.rows, t.cols, t.row_ptr, t.col_idx, vals)
                elif isinstance(t, BalancedWeight):
                    vals = (t.values.astype(np.float64) * q.channel_scales(t.rows)[:, None]).astype(np.float32)
                    t = BalancedWeight(t.rows, t.cols, t.k_per_row, t.col_idx, vals)
                else:
                    t = dequantize(t, q)
            self._f32[name] = t
        return self._f32[name]

    def i8(self, name, node_id):
        q = self.store.quant.get(name)
        if q is None:
            raise ConfigurationError(f"missing quant params: weight {name!r} of node {node_id!r} has none")
        if name not in self._i8:
            t = self.store[name]
            self._i8[name] = (t if t.dtype == np.int8 else quantize_weight(t, q), q)
        return self._i8[name]


def _matmul_operands(node, vals, w):
    if node.weight:
        return w.f32(node.weight), _f32(vals[node.inputs[0]])
    a, b = (_f32(vals[i]) for i in node.inputs)
    if node.attrs.get("transpose_a"):
        a = a.T
    if node.attrs.get("transpose_b"):
        b = b.T
    return np.ascontiguousarray(a), np.ascontiguousarray(b)


def _head_f32(node: Node, vals, w: _Weights, shapes, ep: Epilogue):
    if node.kind == "conv2d":
        x = _f32(vals[node.inputs[0]])
        return conv2d_sparse(x, w.f32(node.weight), node.conv_spec(x.shape[1]), ep)
    lhs, rhs = _matmul_operands(node, vals, w)
    if isinstance(lhs, (CsrWeight, BalancedWeight)):
        return matmul(lhs, rhs, ep)
    return dense_matmul(lhs, rhs, ep)


def _head_i8(node: Node, vals, w: _Weights):
    if not node.weight:
        a, b = _matmul_operands(node, vals, w)
        return dense_matmul(a, b)
    missing = {"input_scale", "output_scale"} - set(node.attrs)
    if missing:
        raise ConfigurationError(f"missing quant params: node {node.id!r} lacks {sorted(missing)}")
    wq, wqp = w.i8(node.weight, node.id)
    x = vals[node.inputs[0]]
    if isinstance(x, QTensor):
        xq, in_scale = x.q, x.scale
    else:
        in_scale = float(node.attrs["input_scale"])
        xq = quantize(x, QuantParams([in_scale]))
    out_scale = float(node.attrs["output_scale"])
    rq = Requant(wqp, QuantParams([in_scale]), QuantParams([out_scale]))
    if node.kind == "conv2d":
        acc = conv2d_acc(xq, wq, node.conv_spec(xq.shape[1]))
        q = apply_epilogue(acc, Epilogue(requant=rq), axis=1)
    else:
        q = matmul(wq, xq, Epilogue(requant=rq))
    return QTensor(q, out_scale)


def _vector(node: Node, vals, w: _Weights):
    x = _f32(vals[node.inputs[0]])
    k, a = node.kind, node.attrs
    if k == "bias_add":
        return bias_add(x, w.f32(node.weight), a.get("axis", _default_bias_axis(x.ndim)) % x.ndim)
    if k == "elementwise":
        return elementwise(x, _f32(vals[node.inputs[1]]), a["op"])
    if k in ("relu", "gelu"):
        return activation(x, k)
    if k == "softmax":
        return softmax(x, a.get("axis", -1))
    if k == "layer_norm":
        return layer_norm(x, w.f32(a["gamma"]), w.f32(a["beta"]), a.get("eps", 1e-5), a.get("axis", -1))
    if k == "quantize":
        return QTensor(quantize(x, QuantParams([a["scale"]])), float(a["scale"]))
    if k == "dequantize":
        return x
    raise AssertionError(k)


def _check_inputs(g: OpGraph, inputs):
    vals = {}
    for gi in g.inputs:
        if gi.name not in inputs:
            raise ShapeError(f"missing graph input {gi.name!r}")
        x = np.asarray(inputs[gi.name])
        if tuple(x.shape) != gi.shape:
            raise ShapeError(f"input {gi.name!r}: expected shape {gi.shape}, got {tuple(x.shape)}")
        if gi.dtype == "i8":
            vals[gi.name] = QTensor(np.ascontiguousarray(x, dtype=np.int8), 1.0)
        else:
            vals[gi.name] = np.ascontiguousarray(x, dtype=np.float32)
    return vals


def run(g: OpGraph, store: WeightStore, inputs: dict, precision: str = "f32", fuse: bool = False) -> dict:
    """Execute ``g`` in topological order; returns ``output_id -> float32 array``.

    ``precision="i8"`` runs every weighted matmul/conv on int8 operands with
    int32 accumulation and requantization (node attrs ``input_scale`` and
    ``output_scale`` plus weight quant params are required); activations flow
    as int8 between consecutive int8 ops and are dequantized for vector ops
    and at the graph outputs. ``fuse=True`` (f32 only) folds epilogue chains
    into their matmul; results are bit-identical either way.
    """
    if precision not in PRECISIONS:
        raise ConfigurationError(f"precision must be one of {PRECISIONS}")
    shapes = shape_infer(g, store)
    vals = _check_inputs(g, inputs)
    w = _Weights(store)
    groups = plan_fusion(g, shapes) if fuse and precision == "f32" else {}
    absorbed = {nid for chain in groups.values() for nid in chain[:-1]}

    for nid in g.order:
        if nid in absorbed:
            continue
        node = g.by_id[nid]
        if nid in groups:
            chain = [g.by_id[c] for c in groups[nid]]
            vals[nid] = _run_group(chain, vals, w, shapes)
        elif node.is_matmul:
            vals[nid] = _head_i8(node, vals, w) if precision == "i8" else _head_f32(node, vals, w, shapes, Epilogue())
        else:
            vals[nid] = _vector(node, vals, w)
    return {o: _f32(vals[o]) for o in g.outputs}


def _run_group(chain, vals, w, shapes):
    head, prev = chain[0], chain[0].id
    bias = elem = act = None
    for n in chain[1:]:
        if n.kind == "bias_add":
            bias = w.f32(n.weight)
        elif n.kind == "elementwise":
            other = next(i for i in n.inputs if i != prev)
            elem = (n.attrs["op"], _f32(vals[other]))
        else:
            act = n.kind
        prev = n.id
    return _head_f32(head, vals, w, shapes, Epilogue(bias=bias, elementwise=elem, activation=act))


def random_inputs(g: OpGraph, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    out = {}
    for gi in g.inputs:
        if gi.dtype == "i8":
            out[gi.name] = rng.integers(-127, 128, size=gi.shape).astype(np.int8)
        else:
            out[gi.name] = rng.standard_normal(gi.shape).astype(np.float32)
    return out


# --------------------------------------------------------------------------- calibration


def calibrate(g: OpGraph, store: WeightStore, inputs: dict, mode: str = "per_channel") -> tuple[OpGraph, WeightStore]:
    """Derive int8 parameters from one f32 run: weight scales from the
    weights, activation scales from observed max magnitudes."""
    probe = OpGraph(g.name, g.inputs, g.nodes, [n.id for n in g.nodes], list(g.order))
    seen = run(probe, store, inputs)
    seen.update({k: np.asarray(v, dtype=np.float32) for k, v in inputs.items()})

    def scale_of(a):
        m = float(np.abs(a).max())
        return m / 127 if m > 0 else 1.0

    doc = g.to_dict()
    new_store = store.copy()
    for raw in doc["nodes"]:
        node = g.by_id[raw["id"]]
        if node.is_matmul and node.weight:
            attrs = raw.setdefault("attrs", {})
            attrs["input_scale"] = scale_of(seen[node.inputs[0]])
            attrs["output_scale"] = scale_of(seen[node.id])
            if node.weight not in new_store.quant:
                new_store.add(node.weight, store[node.weight], quant_params(to_dense(store[node.weight]), mode))
    return graph_from_dict(doc), new_store


# --------------------------------------------------------------------------- sparsity


def apply_sparsity(store: WeightStore, density: float, graph: OpGraph | None = None,
                   method: str = "magnitude", fmt: str = "csr") -> WeightStore:
    """Magnitude-prune every matmul/conv weight to ``density`` per layer.

    Weights are those referenced by matmul/conv nodes of ``graph``, or every
    2-D tensor when no graph is given. Other tensors are copied unchanged.
    """
    if not 0 < density <= 1:
        raise ConfigurationError(f"density must lie in (0, 1], got {density}")
    if method != "magnitude":
        raise ConfigurationError(f"unknown pruning method {method!r}")
    if fmt not in ("csr", "balanced"):
        raise ConfigurationError(f"unknown sparse format {fmt!r}")
    targets = set(graph.matmul_weights()) if graph is not None else {
        n for n, t in store.items() if len(t.shape) == 2
    }
    out = WeightStore()
    for name, t in store.items():
        q = store.quant.get(name)
        if name not in targets:
            out.add(name, t, q)
            continue
        dense = to_dense(t)
        if fmt == "balanced":
            k = kept_count(dense.shape[1], density)
            pruned = balanced_topk(dense, max(k, 1))
        else:
            keep = magnitude_mask([dense], density).layers[0]
            pruned = csr_from_dense(np.where(keep, dense, np.zeros((), dtype=dense.dtype)))
        out.add(name, pruned, q)
    return out
