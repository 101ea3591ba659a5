"""Builders for the bundled toy graphs and their seeded weight stores.

* ``resnet50_toy`` - residual conv net; all matmul work is convolution.
* ``resnet50_toy_half`` - the same net at half width.
* ``bert_toy`` - two post-LN transformer encoder layers on feature-major
  activations, single-head attention; softmax and layer norm make vector
  work a visible share of runtime.
"""
from __future__ import annotations

import math

import numpy as np

from sparsekit.runtime.graph import OpGraph, graph_from_dict
from sparsekit.runtime.store import WeightStore


class _Builder:
    def __init__(self, name):
        self.name = name
        self.inputs, self.nodes, self.weights = [], [], {}

    def input(self, name, shape):
        self.inputs.append({"name": name, "shape": list(shape), "dtype": "f32"})
        return name

    def node(self, nid, kind, inputs, weight=None, **attrs):
        d = {"id": nid, "kind": kind, "inputs": list(inputs)}
        if weight:
            d["weight"] = weight
        if attrs:
            d["attrs"] = attrs
        self.nodes.append(d)
        return nid

    def conv(self, nid, x, cin, cout, k, stride=1, pad=None, act="relu", residual=None, bias=True):
        pad = k // 2 if pad is None else pad
        self.weights[f"{nid}.w"] = ("he", (cout, cin * k * k))
        y = self.node(nid, "conv2d", [x], f"{nid}.w", out_channels=cout, kernel=k, stride=stride, padding=pad)
        if bias:
            self.weights[f"{nid}.b"] = ("bias", (cout,))
            y = self.node(f"{nid}.bias", "bias_add", [y], f"{nid}.b")
        if residual is not None:
            y = self.node(f"{nid}.add", "elementwise", [y, residual], op="add")
        if act:
            y = self.node(f"{nid}.{act}", act, [y])
        return y

    def linear(self, nid, x, fin, fout, act=None, residual=None, scale=1.0):
        self.weights[f"{nid}.w"] = ("he", (fout, fin), scale)
        self.weights[f"{nid}.b"] = ("bias", (fout,))
        y = self.node(nid, "matmul", [x], f"{nid}.w", out_features=fout)
        y = self.node(f"{nid}.bias", "bias_add", [y], f"{nid}.b")
        if residual is not None:
            y = self.node(f"{nid}.add", "elementwise", [y, residual], op="add")
        if act:
            y = self.node(f"{nid}.{act}", act, [y])
        return y

    def layer_norm(self, nid, x, width):
        self.weights[f"{nid}.g"] = ("ones", (width,))
        self.weights[f"{nid}.beta"] = ("zeros", (width,))
        return self.node(nid, "layer_norm", [x], gamma=f"{nid}.g", beta=f"{nid}.beta", eps=1e-5, axis=0)

    def graph(self, outputs) -> OpGraph:
        return graph_from_dict({"name": self.name, "inputs": self.inputs, "nodes": self.nodes, "outputs": outputs})

    def store(self, seed) -> WeightStore:
        rng = np.random.default_rng(seed)
        store = WeightStore()
        for name, spec in self.weights.items():
            kind, shape = spec[0], spec[1]
            if kind == "he":
                scale = spec[2] if len(spec) > 2 else 1.0
                a = rng.standard_normal(shape) * math.sqrt(2.0 / shape[1]) * scale
            elif kind == "bias":
                a = rng.standard_normal(shape) * 0.05
            elif kind == "ones":
                a = np.ones(shape)
            else:
                a = np.zeros(shape)
            store.add(name, a.astype(np.float32))
        return store


def _resnet(name, width, classes=10, image=32) -> _Builder:
    b = _Builder(name)
    x = b.input("image", (1, 3, image, image))
    w1, w2 = width, 2 * width
    y = b.conv("stem", x, 3, w1, 3)
    for i in (1, 2):
        h = b.conv(f"block{i}.a", y, w1, w1, 3)
        y = b.conv(f"block{i}.b", h, w1, w1, 3, residual=y)
    h = b.conv("down.a", y, w1, w2, 3, stride=2)
    # projection shortcut carries no bias of its own; it would fold into down.b's
    sc = b.conv("down.shortcut", y, w1, w2, 1, stride=2, act=None, bias=False)
    y = b.conv("down.b", h, w2, w2, 3, residual=sc)
    h = b.conv("block3.a", y, w2, w2, 3)
    y = b.conv("block3.b", h, w2, w2, 3, residual=y)
    b.conv("head", y, w2, classes, 1, act=None)
    b.outputs = ["head.bias"]
    return b


def _bert(name, hidden=256, seq=128, ffn=1024, layers=2) -> _Builder:
    b = _Builder(name)
    x = b.input("tokens", (hidden, seq))
    for l in range(layers):
        p = f"l{l}"
        # 1/sqrt(d) attention temperature folded into the query projection
        q = b.linear(f"{p}.q", x, hidden, hidden, scale=1.0 / math.sqrt(hidden))
        k = b.linear(f"{p}.k", x, hidden, hidden)
        v = b.linear(f"{p}.v", x, hidden, hidden)
        s = b.node(f"{p}.scores", "matmul", [k, q], transpose_a=True)
        pr = b.node(f"{p}.probs", "softmax", [s], axis=0)
        ctx = b.node(f"{p}.ctx", "matmul", [v, pr])
        o = b.linear(f"{p}.o", ctx, hidden, hidden, residual=x)
        h = b.layer_norm(f"{p}.ln1", o, hidden)
        f = b.linear(f"{p}.ffn1", h, hidden, ffn, act="gelu")
        f = b.linear(f"{p}.ffn2", f, ffn, hidden, residual=h)
        x = b.layer_norm(f"{p}.ln2", f, hidden)
    b.outputs = [x]
    return b


def _matmul(name, m, k, n) -> _Builder:
    b = _Builder(name)
    x = b.input("x", (k, n))
    b.weights["w"] = ("he", (m, k))
    b.outputs = [b.node("mm", "matmul", [x], "w", out_features=m)]
    return b


BUILDERS = {
    "resnet50_toy": lambda: _resnet("resnet50_toy", 64),
    "resnet50_toy_half": lambda: _resnet("resnet50_toy_half", 32),
    "bert_toy": lambda: _bert("bert_toy"),
    "matmul_512": lambda: _matmul("matmul_512", 512, 512, 512),
}


def toy_graph(name: str) -> OpGraph:
    b = BUILDERS[name]()
    return b.graph(b.outputs)


def toy_store(name: str, seed: int = 0) -> WeightStore:
    return BUILDERS[name]().store(seed)
