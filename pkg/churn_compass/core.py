"""Numerically stable primitives shared by every module."""

from typing import Union

import numpy as np
from scipy.special import log_softmax as _log_softmax
from scipy.special import softmax as _softmax

from .errors import ShapeMismatchError
from .models import (
    LabelVector,
    LogitMatrix,
    PredictionBundle,
    ProbMatrix,
    as_labels,
    as_logits,
    validate_bundle,
)

ArrayLike = Union[LogitMatrix, ProbMatrix, np.ndarray, list]

__all__ = [
    "softmax",
    "log_softmax",
    "hard_predict",
    "accuracy",
    "correctness",
    "validate_bundle",
    "bundle_from_arrays",
]


def softmax(logits: Union[LogitMatrix, np.ndarray, list]) -> ProbMatrix:
    """Row-wise softmax; scipy subtracts the row max so large logits never overflow."""
    z = as_logits(logits).data
    return ProbMatrix(_softmax(z, axis=1))


def log_softmax(logits: Union[LogitMatrix, np.ndarray, list]) -> np.ndarray:
    """Row-wise log-probabilities as a plain array."""
    z = as_logits(logits).data
    return _log_softmax(z, axis=1)


def hard_predict(logits: ArrayLike) -> LabelVector:
    """Per-row argmax; ties go to the lowest class index."""
    if isinstance(logits, ProbMatrix):
        data = logits.data
    else:
        data = as_logits(logits).data
    # np.argmax returns the first maximal index
    return LabelVector(np.argmax(data, axis=1))


def correctness(logits: ArrayLike, labels: Union[LabelVector, np.ndarray, list]) -> np.ndarray:
    """Boolean vector: prediction equals label."""
    preds = hard_predict(logits).labels
    y = as_labels(labels).labels
    if preds.shape != y.shape:
        raise ShapeMismatchError(f"{preds.shape[0]} predictions for {y.shape[0]} labels")
    return preds == y


def accuracy(logits: ArrayLike, labels: Union[LabelVector, np.ndarray, list]) -> float:
    return float(correctness(logits, labels).mean())


def bundle_from_arrays(base, new, labels) -> PredictionBundle:
    """Build and validate a bundle from raw arrays."""
    return PredictionBundle(as_logits(base), as_logits(new), as_labels(labels))
