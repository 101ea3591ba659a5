"""Synthetic two-cluster classification task.

A large clean "pretraining" split trains the dense teacher; the small,
label-noisy "downstream" split is what the pruned student is fine-tuned on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


@dataclass(frozen=True)
class TwoClusterTask:
    dim: int = 8
    separation: float = 1.5
    curvature: float = 1.0
    n_pretrain: int = 2000
    n_train: int = 64
    n_test: int = 1000
    label_noise: float = 0.2

    def _sample(self, rng, n, centers):
        y = rng.integers(0, 2, size=n)
        x = rng.standard_normal((n, self.dim)) + centers[y]
        # bend the class boundary so that a linear model is not enough
        x[:, 1] += self.curvature * (x[:, 0] ** 2 - 1.0) * np.where(y == 1, 1.0, -1.0) * 0.5
        return x, y

    def make(self, seed: int) -> tuple[Dataset, Dataset]:
        """``(pretrain, downstream)`` splits sharing one test set."""
        rng = np.random.default_rng(seed)
        direction = rng.standard_normal(self.dim)
        direction /= np.linalg.norm(direction)
        centers = np.stack([-direction, direction]) * self.separation / 2
        xp, yp = self._sample(rng, self.n_pretrain, centers)
        xd, yd = self._sample(rng, self.n_train, centers)
        flip = rng.random(self.n_train) < self.label_noise
        yd = np.where(flip, 1 - yd, yd)
        xt, yt = self._sample(rng, self.n_test, centers)
        return Dataset(xp, yp, xt, yt), Dataset(xd, yd, xt, yt)
