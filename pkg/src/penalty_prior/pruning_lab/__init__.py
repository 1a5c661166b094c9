"""Desk-scale MLP training with penalty plans and neuron pruning."""

from .data import Dataset, load_csv_dataset, make_synthetic_dataset
from .mlp import (
    MLPModel,
    forward_backward,
    layer_penalty,
    layer_prox,
    penalty_prox,
    penalty_value_and_subgradient,
    prune_step,
)
from .training import PruneReport, SweepPoint, TrainConfig, lambda_sweep, train_two_phase

__all__ = [
    "Dataset", "MLPModel", "PruneReport", "SweepPoint", "TrainConfig",
    "forward_backward", "lambda_sweep", "layer_penalty", "load_csv_dataset",
    "layer_prox", "make_synthetic_dataset", "penalty_prox", "penalty_value_and_subgradient",
    "prune_step", "train_two_phase",
]
