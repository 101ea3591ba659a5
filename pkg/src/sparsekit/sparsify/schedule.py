from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sparsekit.errors import ConfigurationError

PER_LAYER = "per_layer"
GLOBAL = "global"


@dataclass(frozen=True)
class PruneSchedule:
    """Cubic density decay from ``d_init`` at ``t_begin`` to ``d_final`` at ``t_end``."""

    d_init: float = 1.0
    d_final: float = 0.125
    t_begin: int = 0
    t_end: int = 100
    prune_every: int = 10
    exponent: int = 3

    def __post_init__(self):
        if not (0 < self.d_final <= self.d_init <= 1):
            raise ConfigurationError(f"need 0 < d_final <= d_init <= 1, got {self.d_init}, {self.d_final}")
        if self.t_begin >= self.t_end:
            raise ConfigurationError("t_begin must be < t_end")
        if self.prune_every < 1:
            raise ConfigurationError("prune_every must be >= 1")
        if self.exponent != 3:
            raise ConfigurationError("only the cubic schedule is supported")


def schedule_density(sched: PruneSchedule, t: int) -> float:
    if t <= sched.t_begin:
        return sched.d_init
    if t >= sched.t_end:
        return sched.d_final
    frac = (t - sched.t_begin) / (sched.t_end - sched.t_begin)
    return sched.d_final + (sched.d_init - sched.d_final) * (1.0 - frac) ** sched.exponent


def kept_count(numel: int, d: float) -> int:
    # guard against float noise such as 0.125 * 64 -> 8.000000000000002
    return min(numel, math.ceil(round(d * numel, 9)))


@dataclass
class Mask:
    """Per-layer boolean keep-masks, congruent to the weight matrices."""

    layers: list[np.ndarray]

    def kept(self) -> list[int]:
        return [int(m.sum()) for m in self.layers]

    def density(self) -> float:
        return sum(self.kept()) / sum(m.size for m in self.layers)

    @classmethod
    def ones(cls, weights) -> Mask:
        return cls([np.ones(w.shape, dtype=bool) for w in weights])

    def copy(self) -> Mask:
        return Mask([m.copy() for m in self.layers])


def _keep_top(mag: np.ndarray, k: int) -> np.ndarray:
    flat = mag.reshape(-1)
    keep = np.zeros(flat.size, dtype=bool)
    # stable sort: larger magnitude first, lower flat index first among ties
    keep[np.argsort(-flat, kind="stable")[:k]] = True
    return keep


def magnitude_mask(weights, d: float, scope: str = PER_LAYER) -> Mask:
    """Keep the ``ceil(d * numel)`` largest-|w| entries per layer (or over all layers)."""
    if not 0 < d <= 1:
        raise ConfigurationError(f"density must lie in (0, 1], got {d}")
    weights = [np.asarray(w) for w in weights]
    if scope == PER_LAYER:
        return Mask([_keep_top(np.abs(w), kept_count(w.size, d)).reshape(w.shape) for w in weights])
    if scope == GLOBAL:
        mags = np.concatenate([np.abs(w).reshape(-1) for w in weights])
        keep = _keep_top(mags, kept_count(mags.size, d))
        bounds = np.cumsum([0] + [w.size for w in weights])
        return Mask([keep[a:b].reshape(w.shape) for a, b, w in zip(bounds, bounds[1:], weights)])
    raise ConfigurationError(f"unknown pruning scope {scope!r}")
