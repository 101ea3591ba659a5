"""Desk-scale pruning: cubic schedules, magnitude masks, masked training and
distillation of intermediate feature maps from a dense teacher."""
from sparsekit.sparsify.data import Dataset, TwoClusterTask
from sparsekit.sparsify.experiment import ExperimentConfig, run_experiment, to_weight_store
from sparsekit.sparsify.model import (
    DistillConfig,
    FeatureTrace,
    Grads,
    Mlp,
    accuracy,
    forward,
    init_mlp,
    kl_divergence,
    loss_and_grads,
)
from sparsekit.sparsify.schedule import GLOBAL, PER_LAYER, Mask, PruneSchedule, kept_count, magnitude_mask, schedule_density
from sparsekit.sparsify.train import METRICS_HEADER, TrainState, prune_finetune, sgd_step, train_dense

__all__ = [
    "GLOBAL",
    "METRICS_HEADER",
    "PER_LAYER",
    "Dataset",
    "DistillConfig",
    "ExperimentConfig",
    "FeatureTrace",
    "Grads",
    "Mask",
    "Mlp",
    "PruneSchedule",
    "TrainState",
    "TwoClusterTask",
    "accuracy",
    "forward",
    "init_mlp",
    "kept_count",
    "kl_divergence",
    "loss_and_grads",
    "magnitude_mask",
    "prune_finetune",
    "run_experiment",
    "schedule_density",
    "sgd_step",
    "to_weight_store",
    "train_dense",
]
