"""Config-driven pretrain -> prune + distill experiment (used by ``prune-train``)."""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from sparsekit.errors import ConfigurationError
from sparsekit.sparsify.data import TwoClusterTask
from sparsekit.sparsify.model import DistillConfig, Mlp, init_mlp
from sparsekit.sparsify.schedule import Mask, PruneSchedule
from sparsekit.sparsify.train import prune_finetune, train_dense
from sparsekit.tensor import csr_from_dense

_SECTIONS = {
    "task": {f.name for f in dataclasses.fields(TwoClusterTask)},
    "model": {"sizes", "activation"},
    "pretrain": {"epochs", "lr", "momentum", "batch_size"},
    "schedule": {f.name for f in dataclasses.fields(PruneSchedule)},
    "distill": {f.name for f in dataclasses.fields(DistillConfig)},
    "finetune": {"epochs", "lr", "momentum", "batch_size"},
}


@dataclasses.dataclass
class ExperimentConfig:
    task: TwoClusterTask
    sizes: list[int]
    activation: str
    pretrain: dict
    schedule: PruneSchedule
    distill: DistillConfig
    finetune: dict

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        unknown = set(raw) - set(_SECTIONS) - {"_comment"}
        if unknown:
            raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
        for name, allowed in _SECTIONS.items():
            if name not in raw:
                raise ConfigurationError(f"missing config section {name!r}")
            extra = set(raw[name]) - allowed
            if extra:
                raise ConfigurationError(f"unknown keys in {name!r}: {sorted(extra)}")
        distill = dict(raw["distill"])
        if distill.get("feature_layers") is not None:
            distill["feature_layers"] = tuple(distill["feature_layers"])
        try:
            return cls(
                task=TwoClusterTask(**raw["task"]),
                sizes=list(raw["model"]["sizes"]),
                activation=raw["model"].get("activation", "gelu"),
                pretrain=dict(raw["pretrain"]),
                schedule=PruneSchedule(**raw["schedule"]),
                distill=DistillConfig(**distill),
                finetune=dict(raw["finetune"]),
            )
        except (TypeError, KeyError) as exc:
            raise ConfigurationError(f"bad experiment config: {exc}") from None

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_alpha_feat(self, alpha_feat: float) -> ExperimentConfig:
        return dataclasses.replace(self, distill=dataclasses.replace(self.distill, alpha_feat=alpha_feat))


def run_experiment(cfg: ExperimentConfig, seed: int):
    """Train a dense teacher on the pretraining split, then prune a copy of it
    on the downstream split. Returns ``(student, mask, history)``."""
    pretrain, downstream = cfg.task.make(seed)
    p = cfg.pretrain
    teacher = train_dense(init_mlp(cfg.sizes, cfg.activation, seed), pretrain,
                          p["epochs"], p["lr"], p["momentum"], p["batch_size"], seed)
    f = cfg.finetune
    return prune_finetune(teacher, downstream, cfg.schedule, cfg.distill, f["epochs"], seed,
                          lr=f["lr"], momentum=f["momentum"], batch_size=f["batch_size"])


def to_weight_store(model: Mlp, mask: Mask) -> dict:
    """Final weights as SPW1-ready entries: CSR f32 weights, dense f32 biases."""
    store = {}
    for i, (w, b, m) in enumerate(zip(model.weights, model.biases, mask.layers)):
        store[f"fc{i}.weight"] = csr_from_dense((w * m).astype(np.float32))
        store[f"fc{i}.bias"] = b.astype(np.float32)
    return store
