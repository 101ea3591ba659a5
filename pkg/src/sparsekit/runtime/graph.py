"""JSON operator graphs: parsing, validation and shape inference.

Document layout::

    {"name": "...",
     "inputs":  [{"name": "x", "shape": [1, 3, 32, 32], "dtype": "f32"}],
     "nodes":   [{"id": "c1", "kind": "conv2d", "inputs": ["x"], "weight": "c1.w",
                  "attrs": {"out_channels": 8, "kernel": 3, "padding": 1}}],
     "outputs": ["c1"]}

Matmul computes ``W @ X`` on feature-major activations ``(features, tokens)``;
without a weight it multiplies its two inputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from sparsekit.errors import GraphError, ParseError, ShapeError
from sparsekit.kernels.conv import ConvSpec

KINDS = ("matmul", "conv2d", "bias_add", "elementwise", "relu", "gelu", "softmax", "layer_norm",
         "quantize", "dequantize")
DTYPES = ("f32", "i8")

_QUANT_ATTRS = {"input_scale", "output_scale"}
ATTRS = {
    "matmul": {"out_features", "transpose_a", "transpose_b"} | _QUANT_ATTRS,
    "conv2d": {"out_channels", "kernel", "stride", "padding"} | _QUANT_ATTRS,
    "bias_add": {"axis"},
    "elementwise": {"op"},
    "relu": set(),
    "gelu": set(),
    "softmax": {"axis"},
    "layer_norm": {"gamma", "beta", "eps", "axis"},
    "quantize": {"scale"},
    "dequantize": set(),
}
_ARITY = {"conv2d": 1, "bias_add": 1, "relu": 1, "gelu": 1, "softmax": 1, "layer_norm": 1,
          "quantize": 1, "dequantize": 1}
_TOP_KEYS = {"name", "inputs", "nodes", "outputs"}
_NODE_KEYS = {"id", "kind", "inputs", "attrs", "weight"}
_INPUT_KEYS = {"name", "shape", "dtype"}


@dataclass(frozen=True)
class GraphInput:
    name: str
    shape: tuple[int, ...]
    dtype: str = "f32"


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    inputs: tuple[str, ...]
    attrs: dict = field(default_factory=dict, compare=False, hash=False)
    weight: str | None = None

    def weight_names(self) -> list[str]:
        names = [self.weight] if self.weight else []
        if self.kind == "layer_norm":
            names += [self.attrs["gamma"], self.attrs["beta"]]
        return names

    @property
    def is_matmul(self) -> bool:
        return self.kind in ("matmul", "conv2d")

    def conv_spec(self, in_channels: int) -> ConvSpec:
        k = self.attrs["kernel"]
        kh, kw = (k, k) if isinstance(k, int) else tuple(k)
        return ConvSpec(in_channels, self.attrs["out_channels"], kh, kw,
                        self.attrs.get("stride", 1), self.attrs.get("padding", 0))


@dataclass
class OpGraph:
    name: str
    inputs: list[GraphInput]
    nodes: list[Node]
    outputs: list[str]
    order: list[str] = field(default_factory=list)  # topological node order

    def __post_init__(self):
        self.by_id = {n.id: n for n in self.nodes}
        self.input_names = {i.name for i in self.inputs}

    def consumers(self) -> dict[str, list[str]]:
        out = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for src in n.inputs:
                if src in out:
                    out[src].append(n.id)
        return out

    def weight_names(self) -> list[str]:
        seen = []
        for n in self.nodes:
            for w in n.weight_names():
                if w not in seen:
                    seen.append(w)
        return seen

    def matmul_weights(self) -> list[str]:
        return [n.weight for n in self.nodes if n.is_matmul and n.weight]

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {"id": n.id, "kind": n.kind, "inputs": list(n.inputs)}
            if n.weight:
                d["weight"] = n.weight
            if n.attrs:
                d["attrs"] = dict(n.attrs)
            nodes.append(d)
        return {
            "name": self.name,
            "inputs": [{"name": i.name, "shape": list(i.shape), "dtype": i.dtype} for i in self.inputs],
            "nodes": nodes,
            "outputs": list(self.outputs),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _unknown(keys, allowed, node_id=None, what="key"):
    extra = sorted(set(keys) - allowed)
    if extra:
        raise GraphError("unknown_key", f"unknown {what}(s) {extra}", node_id)


def _check_attrs(n: Node):
    a = n.attrs
    _unknown(a, ATTRS[n.kind], n.id, "attr")

    def need(name, kind=int):
        if name not in a:
            raise GraphError("bad_attr", f"missing attr {name!r}", n.id)
        if not isinstance(a[name], kind) or isinstance(a[name], bool) and kind is not bool:
            raise GraphError("bad_attr", f"attr {name!r} has the wrong type", n.id)

    if n.kind == "conv2d":
        if not n.weight:
            raise GraphError("bad_attr", "conv2d needs a weight", n.id)
        need("out_channels")
        k = a.get("kernel")
        if not (isinstance(k, int) or (isinstance(k, list) and len(k) == 2 and all(isinstance(v, int) for v in k))):
            raise GraphError("bad_attr", "kernel must be an int or [kh, kw]", n.id)
    elif n.kind == "matmul":
        if n.weight:
            need("out_features")
            if len(n.inputs) != 1:
                raise GraphError("bad_attr", "weighted matmul takes one input", n.id)
        elif len(n.inputs) != 2:
            raise GraphError("bad_attr", "matmul without weight takes two inputs", n.id)
    elif n.kind == "bias_add" and not n.weight:
        raise GraphError("bad_attr", "bias_add needs a weight (the bias)", n.id)
    elif n.kind == "elementwise":
        if a.get("op") not in ("add", "mul"):
            raise GraphError("bad_attr", "elementwise op must be 'add' or 'mul'", n.id)
        if len(n.inputs) != 2:
            raise GraphError("bad_attr", "elementwise takes two inputs", n.id)
    elif n.kind == "layer_norm":
        for k in ("gamma", "beta"):
            need(k, str)
    elif n.kind == "quantize":
        if not isinstance(a.get("scale"), (int, float)) or not a["scale"] > 0:
            raise GraphError("bad_attr", "quantize needs a positive scale", n.id)
    for k in _QUANT_ATTRS & set(a):
        if not isinstance(a[k], (int, float)) or not a[k] > 0:
            raise GraphError("bad_attr", f"{k} must be positive", n.id)
    if n.kind in _ARITY and len(n.inputs) != _ARITY[n.kind]:
        raise GraphError("bad_attr", f"{n.kind} takes {_ARITY[n.kind]} input(s)", n.id)
    if n.weight and n.kind not in ("matmul", "conv2d", "bias_add"):
        raise GraphError("bad_attr", f"{n.kind} does not take a weight", n.id)


def _toposort(g: OpGraph) -> list[str]:
    """Kahn's algorithm, ties resolved by declaration order."""
    indeg = {n.id: sum(1 for s in n.inputs if s in g.by_id) for n in g.nodes}
    consumers = g.consumers()
    ready = [n.id for n in g.nodes if indeg[n.id] == 0]
    pos = {n.id: i for i, n in enumerate(g.nodes)}
    order = []
    while ready:
        ready.sort(key=pos.get)
        nid = ready.pop(0)
        order.append(nid)
        for c in consumers[nid]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != len(g.nodes):
        stuck = next(n.id for n in g.nodes if n.id not in set(order))
        raise GraphError("cycle", "graph edges form a cycle", stuck)
    return order


def graph_from_dict(doc) -> OpGraph:
    if not isinstance(doc, dict):
        raise ParseError("graph document must be a JSON object")
    _unknown(doc, _TOP_KEYS)
    for k in _TOP_KEYS:
        if k not in doc:
            raise GraphError("missing_key", f"missing top-level key {k!r}")
    inputs = []
    for raw in doc["inputs"]:
        _unknown(raw, _INPUT_KEYS, raw.get("name"))
        shape = tuple(raw["shape"])
        if not shape or any(not isinstance(d, int) or d < 1 for d in shape):
            raise GraphError("shape", f"input shape {list(shape)} must be positive integers", raw.get("name"))
        dtype = raw.get("dtype", "f32")
        if dtype not in DTYPES:
            raise GraphError("bad_attr", f"unknown dtype {dtype!r}", raw.get("name"))
        inputs.append(GraphInput(raw["name"], shape, dtype))
    nodes, seen = [], {i.name for i in inputs}
    if len(seen) != len(inputs):
        raise GraphError("duplicate_id", "duplicate graph input name")
    for raw in doc["nodes"]:
        nid = raw.get("id")
        _unknown(raw, _NODE_KEYS, nid)
        if not isinstance(nid, str) or not nid:
            raise GraphError("missing_key", "node without an id")
        if raw.get("kind") not in KINDS:
            raise GraphError("unknown_kind", f"unknown op kind {raw.get('kind')!r}", nid)
        if nid in seen:
            raise GraphError("duplicate_id", "id is already used", nid)
        seen.add(nid)
        n = Node(nid, raw["kind"], tuple(raw.get("inputs", [])), dict(raw.get("attrs", {})), raw.get("weight"))
        _check_attrs(n)
        nodes.append(n)
    for n in nodes:
        for src in n.inputs:
            if src not in seen:
                raise GraphError("dangling_reference", f"input {src!r} is not defined", n.id)
    if not doc["outputs"]:
        raise GraphError("missing_key", "graph has no outputs")
    for o in doc["outputs"]:
        if o not in seen:
            raise GraphError("dangling_reference", f"output {o!r} is not defined", o)
    g = OpGraph(doc["name"], inputs, nodes, list(doc["outputs"]))
    g.order = _toposort(g)
    return g


def parse_graph(text: str | bytes, store=None) -> OpGraph:
    """Parse and validate a graph document; shapes are inferred eagerly so
    a graph that returns from here is runnable with a matching store."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"invalid graph JSON: {exc}") from None
    g = graph_from_dict(doc)
    shape_infer(g, store)
    return g


def _mismatch(node_id, what, expected, actual):
    return GraphError("shape", f"{what}: expected {expected}, got {actual}", node_id)


def shape_infer(g: OpGraph, store=None) -> dict[str, tuple[int, ...]]:
    """Shapes of every graph input and node output. With a store, weight
    presence and shapes are checked too."""
    shapes = {i.name: i.shape for i in g.inputs}

    def weight_shape(node, name, expected):
        if store is None:
            return
        if name not in store:
            raise GraphError("missing_weight", f"weight {name!r} not in store", node.id)
        got = tuple(store.shape(name))
        if got != tuple(expected):
            raise _mismatch(node.id, f"weight {name!r} shape", tuple(expected), got)

    for nid in g.order:
        n = g.by_id[nid]
        ins = [shapes[s] for s in n.inputs]
        x = ins[0] if ins else None
        if n.kind == "matmul":
            if n.weight:
                if len(x) != 2:
                    raise _mismatch(nid, "matmul input rank", 2, len(x))
                out_f = n.attrs["out_features"]
                weight_shape(n, n.weight, (out_f, x[0]))
                out = (out_f, x[1])
            else:
                a, b = ins
                if len(a) != 2 or len(b) != 2:
                    raise _mismatch(nid, "matmul operand ranks", (2, 2), (len(a), len(b)))
                a = a[::-1] if n.attrs.get("transpose_a") else a
                b = b[::-1] if n.attrs.get("transpose_b") else b
                if a[1] != b[0]:
                    raise _mismatch(nid, "matmul inner extent", a[1], b[0])
                out = (a[0], b[1])
        elif n.kind == "conv2d":
            if len(x) != 4:
                raise _mismatch(nid, "conv2d input rank", 4, len(x))
            try:
                spec = n.conv_spec(x[1])
                oh, ow = spec.out_hw(x[2], x[3])
            except ShapeError as exc:
                raise GraphError("shape", str(exc), nid) from None
            weight_shape(n, n.weight, spec.weight_shape)
            out = (x[0], spec.out_channels, oh, ow)
        elif n.kind == "bias_add":
            axis = n.attrs.get("axis", 1 if len(x) == 4 else 0)
            if not -len(x) <= axis < len(x):
                raise GraphError("bad_attr", f"axis {axis} out of range for rank {len(x)}", nid)
            weight_shape(n, n.weight, (x[axis],))
            out = x
        elif n.kind == "elementwise":
            if ins[0] != ins[1]:
                raise _mismatch(nid, "elementwise operand shapes", ins[0], ins[1])
            out = x
        elif n.kind in ("softmax", "layer_norm"):
            axis = n.attrs.get("axis", -1)
            if not -len(x) <= axis < len(x):
                raise GraphError("bad_attr", f"axis {axis} out of range for rank {len(x)}", nid)
            if n.kind == "layer_norm":
                weight_shape(n, n.attrs["gamma"], (x[axis],))
                weight_shape(n, n.attrs["beta"], (x[axis],))
            out = x
        else:
            out = x
        shapes[nid] = tuple(out)
    return shapes
