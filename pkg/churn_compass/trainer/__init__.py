"""Desk-scale MLP training, per-sample gradients and the compatibility projection."""

from .datasets import Dataset, DatasetKind, split_dataset, synth_dataset
from .losses import loss_distill, loss_focal
from .network import GradientSet, MlpNet, embed, forward, init_mlp, per_sample_gradients
from .qp import Compatibility, QpSolution, compatibility, dual_qp_solve
from .selfconsistency import SelfConsistencyTrace, self_consistency_run
from .training import NetSpec, OptimizerKind, TrainConfig, TrainMode, TrainResult, train

__all__ = [
    "Dataset",
    "DatasetKind",
    "split_dataset",
    "synth_dataset",
    "loss_distill",
    "loss_focal",
    "GradientSet",
    "MlpNet",
    "embed",
    "forward",
    "init_mlp",
    "per_sample_gradients",
    "Compatibility",
    "QpSolution",
    "compatibility",
    "dual_qp_solve",
    "SelfConsistencyTrace",
    "self_consistency_run",
    "NetSpec",
    "OptimizerKind",
    "TrainConfig",
    "TrainMode",
    "TrainResult",
    "train",
]
