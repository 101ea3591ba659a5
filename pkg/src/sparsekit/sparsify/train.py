from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sparsekit.errors import DivergenceError
from sparsekit.sparsify.data import Dataset
from sparsekit.sparsify.model import DistillConfig, Grads, Mlp, accuracy, loss_and_grads
from sparsekit.sparsify.schedule import PER_LAYER, Mask, PruneSchedule, kept_count, magnitude_mask, schedule_density

METRICS_HEADER = ("step", "density", "loss", "accuracy")


@dataclass
class TrainState:
    step: int
    velocity_w: list[np.ndarray]
    velocity_b: list[np.ndarray]
    lr: float
    seed: int
    mask: Mask

    @classmethod
    def fresh(cls, model: Mlp, lr: float, seed: int = 0, mask: Mask | None = None) -> TrainState:
        return cls(
            0,
            [np.zeros_like(w) for w in model.weights],
            [np.zeros_like(b) for b in model.biases],
            lr,
            seed,
            mask if mask is not None else Mask.ones(model.weights),
        )


def sgd_step(model: Mlp, state: TrainState, grads: Grads, lr: float | None = None, momentum: float = 0.0):
    """Momentum SGD: ``v <- mu*v + g; w <- w - lr*v``, then re-apply the mask.

    Returns new ``(model, state)``; inputs are not modified.
    """
    lr = state.lr if lr is None else lr
    new = model.copy()
    vw, vb = [], []
    for i, m in enumerate(state.mask.layers):
        v = (momentum * state.velocity_w[i] + grads.weights[i]) * m
        new.weights[i] = (model.weights[i] - lr * v) * m
        vw.append(v)
        u = momentum * state.velocity_b[i] + grads.biases[i]
        new.biases[i] = model.biases[i] - lr * u
        vb.append(u)
    return new, TrainState(state.step + 1, vw, vb, state.lr, state.seed, state.mask)


def _apply_mask(model: Mlp, state: TrainState, mask: Mask):
    for i, m in enumerate(mask.layers):
        model.weights[i] = model.weights[i] * m
        state.velocity_w[i] = state.velocity_w[i] * m
    state.mask = mask


def train_dense(model: Mlp, data: Dataset, epochs: int, lr: float, momentum: float, batch_size: int, seed: int) -> Mlp:
    """Ordinary cross-entropy training, no mask and no teacher."""
    sched = PruneSchedule(1.0, 1.0, 0, 1, 1)
    trained, _, _ = prune_finetune(model, data, sched, DistillConfig(1.0, 0.0, 0.0), epochs, seed,
                                   lr=lr, momentum=momentum, batch_size=batch_size, track=False)
    return trained


def prune_finetune(
    model: Mlp,
    data: Dataset,
    sched: PruneSchedule,
    cfg: DistillConfig,
    epochs: int,
    seed: int,
    *,
    teacher: Mlp | None = None,
    lr: float = 0.05,
    momentum: float = 0.9,
    batch_size: int = 16,
    scope: str = PER_LAYER,
    track: bool = True,
):
    """Gradual magnitude pruning interleaved with (distilled) fine-tuning.

    The mask is recomputed at ``schedule_density(t)`` every ``prune_every``
    steps within ``[t_begin, t_end]`` and once more at ``t_end``. If the run is
    shorter than the schedule the mask is forced to ``d_final`` at the end.
    When ``cfg`` needs a teacher and none is given, a frozen copy of the
    incoming dense model is used.

    Returns ``(model, mask, history)``; history rows follow ``METRICS_HEADER``.
    """
    if cfg.needs_teacher and teacher is None:
        teacher = model.copy()
    if not cfg.needs_teacher:
        teacher = None
    rng = np.random.default_rng(seed)
    model = model.copy()
    state = TrainState.fresh(model, lr, seed)
    _apply_mask(model, state, magnitude_mask(model.weights, schedule_density(sched, 0), scope))

    n = data.x_train.shape[0]
    history = []
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            if sched.t_begin <= t <= sched.t_end and ((t - sched.t_begin) % sched.prune_every == 0 or t == sched.t_end):
                _apply_mask(model, state, magnitude_mask(model.weights, schedule_density(sched, t), scope))
            idx = order[lo:lo + batch_size]
            loss, grads = loss_and_grads(model, state.mask, (data.x_train[idx], data.y_train[idx]), teacher, cfg)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss} at step {t} (lr={lr}, density={state.mask.density():.4f})")
            model, state = sgd_step(model, state, grads, lr, momentum)
            if track:
                acc = accuracy(model, state.mask, data.x_test, data.y_test)
                history.append((t, state.mask.density(), loss, acc))
            t += 1

    want = [kept_count(w.size, sched.d_final) for w in model.weights]
    if scope == PER_LAYER and state.mask.kept() != want:
        _apply_mask(model, state, magnitude_mask(model.weights, sched.d_final, scope))
    return model, state.mask, history
