"""Churn Compass - measure and reduce prediction churn between model versions."""

__version__ = "0.1.0"

from .models import (
    CheckpointSeries,
    ChoiceVector,
    FlipReport,
    LabelVector,
    LogitMatrix,
    MetaModel,
    PredictionBundle,
    ScoreKind,
    ScoreVector,
)
from .metrics import churn, flip_decomposition, relevant_churn
from .amc import select_by_scores, select_combined, select_conf, stack_fit, stack_predict
from .experiment import ChurnExperiment

__all__ = [
    "CheckpointSeries",
    "ChoiceVector",
    "FlipReport",
    "LabelVector",
    "LogitMatrix",
    "MetaModel",
    "PredictionBundle",
    "ScoreKind",
    "ScoreVector",
    "churn",
    "flip_decomposition",
    "relevant_churn",
    "select_by_scores",
    "select_combined",
    "select_conf",
    "stack_fit",
    "stack_predict",
    "ChurnExperiment",
]
