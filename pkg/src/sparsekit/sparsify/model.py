"""Small float64 MLPs with masked weights, manual backprop and a
three-term distillation objective (task CE, softened-logit KL, feature MSE)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sparsekit.errors import ConfigurationError, ShapeError
from sparsekit.sparsify.schedule import Mask

_C = math.sqrt(2.0 / math.pi)


def _gelu(z):
    return 0.5 * z * (1.0 + np.tanh(_C * (z + 0.044715 * (z * z * z))))


def _gelu_grad(z):
    t = np.tanh(_C * (z + 0.044715 * (z * z * z)))
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _C * (1.0 + 3 * 0.044715 * z * z)


_ACT = {
    "gelu": (_gelu, _gelu_grad),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(np.float64)),
}


@dataclass
class Mlp:
    """Weights are ``(out, in)``; inputs are batch-major ``(batch, in)``.

    ``activations[i]`` applies after hidden layer ``i``; the last layer is linear.
    """

    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i + 1], self.sizes[i]) or b.shape != (self.sizes[i + 1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} do not match sizes {self.sizes}")
        if len(self.activations) != len(self.weights) - 1:
            raise ShapeError("need one activation per hidden layer")
        for a in self.activations:
            if a not in _ACT:
                raise ConfigurationError(f"unknown activation {a!r}")

    @property
    def hidden_widths(self) -> list[int]:
        return self.sizes[1:-1]

    def copy(self) -> Mlp:
        return Mlp(list(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   list(self.activations))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_mlp(sizes, activation="gelu", seed=0) -> Mlp:
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal((o, i)) * math.sqrt(2.0 / i) for i, o in zip(sizes, sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    return Mlp(list(sizes), weights, biases, [activation] * (len(sizes) - 2))


@dataclass
class FeatureTrace:
    """Post-activation output of every hidden layer, plus pre-activations for backprop."""

    features: list[np.ndarray]
    pre: list[np.ndarray] = field(repr=False)
    inputs: list[np.ndarray] = field(repr=False)


def _masked(model: Mlp, mask: Mask | None):
    if mask is None:
        return model.weights
    if len(mask.layers) != len(model.weights):
        raise ShapeError("mask has a different number of layers than the model")
    return [w * m for w, m in zip(model.weights, mask.layers)]


def forward(model: Mlp, mask: Mask | None, x: np.ndarray):
    """Return ``(logits, trace)`` using the masked weights ``w * mask``."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != model.sizes[0]:
        raise ShapeError(f"input must be (batch, {model.sizes[0]}), got {a.shape}")
    features, pre, inputs = [], [], []
    ws = _masked(model, mask)
    for i, (w, b) in enumerate(zip(ws, model.biases)):
        inputs.append(a)
        z = a @ w.T + b
        if i == len(ws) - 1:
            return z, FeatureTrace(features, pre, inputs)
        pre.append(z)
        a = _ACT[model.activations[i]][0](z)
        features.append(a)


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def kl_divergence(teacher_logits, student_logits, temperature=1.0) -> float:
    """Batch-mean ``KL(softmax(t/T) || softmax(s/T))``."""
    lt = log_softmax(np.asarray(teacher_logits, dtype=np.float64) / temperature)
    ls = log_softmax(np.asarray(student_logits, dtype=np.float64) / temperature)
    return float((np.exp(lt) * (lt - ls)).sum(axis=1).mean())


@dataclass(frozen=True)
class DistillConfig:
    alpha_task: float = 1.0
    alpha_logit: float = 1.0
    alpha_feat: float = 1.0
    temperature: float = 2.0
    feature_layers: tuple[int, ...] | None = None  # hidden-layer indices; None = all

    def __post_init__(self):
        alphas = (self.alpha_task, self.alpha_logit, self.alpha_feat)
        if min(alphas) < 0 or sum(alphas) <= 0:
            raise ConfigurationError(f"loss weights must be >= 0 with a positive sum, got {alphas}")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")

    @property
    def needs_teacher(self) -> bool:
        return self.alpha_logit > 0 or self.alpha_feat > 0

    def layers_for(self, model: Mlp) -> tuple[int, ...]:
        if self.feature_layers is None:
            return tuple(range(len(model.hidden_widths)))
        return tuple(self.feature_layers)


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def _check_teacher(model, teacher, cfg):
    if cfg.needs_teacher != (teacher is not None):
        raise ConfigurationError("a teacher is required iff alpha_logit or alpha_feat is positive")
    if teacher is None:
        return
    if teacher.sizes[-1] != model.sizes[-1]:
        raise ConfigurationError("teacher and student disagree on the number of classes")
    if cfg.alpha_feat > 0:
        for l in cfg.layers_for(model):
            if l >= len(model.hidden_widths) or l >= len(teacher.hidden_widths):
                raise ConfigurationError(f"feature layer {l} does not exist in both models")
            if model.hidden_widths[l] != teacher.hidden_widths[l]:
                raise ConfigurationError(
                    f"feature layer {l}: student width {model.hidden_widths[l]} != teacher width {teacher.hidden_widths[l]}"
                )


def loss_and_grads(model: Mlp, mask: Mask | None, batch, teacher: Mlp | None, cfg: DistillConfig):
    """Distillation loss on ``batch = (x, y)`` and its gradients.

    loss = a_task * CE + a_logit * T^2 * KL(teacher_T || student_T)
           + a_feat * mean over matched layers of MSE(student, teacher features)

    Gradients of masked-out weights are exactly zero.
    """
    x, y = batch
    y = np.asarray(y)
    _check_teacher(model, teacher, cfg)
    logits, trace = forward(model, mask, x)
    n = logits.shape[0]
    loss = 0.0
    dz = np.zeros_like(logits)

    if cfg.alpha_task > 0:
        ls = log_softmax(logits)
        loss += cfg.alpha_task * float(-ls[np.arange(n), y].mean())
        g = np.exp(ls)
        g[np.arange(n), y] -= 1.0
        dz += cfg.alpha_task * g / n

    dfeat: dict[int, np.ndarray] = {}
    if teacher is not None:
        t_logits, t_trace = forward(teacher, None, x)
        T = cfg.temperature
        if cfg.alpha_logit > 0:
            loss += cfg.alpha_logit * T * T * kl_divergence(t_logits, logits, T)
            ps = np.exp(log_softmax(logits / T))
            pt = np.exp(log_softmax(t_logits / T))
            dz += cfg.alpha_logit * T * (ps - pt) / n
        layers = cfg.layers_for(model)
        if cfg.alpha_feat > 0 and layers:
            share = cfg.alpha_feat / len(layers)
            for l in layers:
                diff = trace.features[l] - t_trace.features[l]
                loss += share * float((diff * diff).mean())
                dfeat[l] = share * 2.0 * diff / diff.size

    ws = _masked(model, mask)
    gw, gb = [None] * len(ws), [None] * len(ws)
    delta = dz
    for i in range(len(ws) - 1, -1, -1):
        gw[i] = delta.T @ trace.inputs[i]
        if mask is not None:
            gw[i] = gw[i] * mask.layers[i]
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        da = delta @ ws[i]
        if i - 1 in dfeat:
            da = da + dfeat[i - 1]
        delta = da * _ACT[model.activations[i - 1]][1](trace.pre[i - 1])
    return loss, Grads(gw, gb)


def accuracy(model: Mlp, mask: Mask | None, x, y) -> float:
    logits, _ = forward(model, mask, x)
    return float((logits.argmax(axis=1) == np.asarray(y)).mean())
