"""Soft-target cross-entropy and the churn-aware training objectives.

Every objective here is cross-entropy against a mixed target, because
(1 - a) CE(p, y) + a CE(p, t) == CE(p, (1 - a) e_y + a t). Training only ever
needs the mixed target and `soft_target_grad`.
"""

from typing import Union

import numpy as np
from scipy.special import log_softmax, xlogy

from ..errors import InvalidInputError, ShapeMismatchError
from ..models import LabelVector, ProbMatrix, as_labels

ProbsLike = Union[ProbMatrix, np.ndarray, list]


def _probs(value: ProbsLike) -> np.ndarray:
    data = value.data if isinstance(value, ProbMatrix) else ProbMatrix(value).data
    return data


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")


def one_hot(labels: Union[LabelVector, np.ndarray, list], k: int) -> np.ndarray:
    y = as_labels(labels, k=k).labels
    out = np.zeros((y.shape[0], k), dtype=np.float64)
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def distill_targets(labels, base_probs: ProbsLike, alpha: float) -> np.ndarray:
    """(1 - alpha) e_y + alpha p_base."""
    _check_alpha(alpha)
    pb = _probs(base_probs)
    return (1.0 - alpha) * one_hot(labels, pb.shape[1]) + alpha * pb


def focal_targets(
    labels, base_probs: ProbsLike, base_correct, alpha: float, epsilon: float = 1.0
) -> np.ndarray:
    """Distillation target p_base where the base is right, epsilon * e_y where it is wrong."""
    _check_alpha(alpha)
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    pb = _probs(base_probs)
    ok = np.asarray(base_correct, dtype=bool)
    if ok.shape != (pb.shape[0],):
        raise ShapeMismatchError(f"{ok.shape[0]} correctness flags for {pb.shape[0]} samples")
    y = one_hot(labels, pb.shape[1])
    second = np.where(ok[:, None], pb, epsilon * y)
    return (1.0 - alpha) * y + alpha * second


def cross_entropy(probs: ProbsLike, targets: np.ndarray) -> float:
    """Mean of -sum_c t_c log p_c; terms with t_c == 0 contribute 0."""
    p = _probs(probs)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeMismatchError(f"targets {t.shape} vs probabilities {p.shape}")
    return float(np.mean(-xlogy(t, p).sum(axis=1)))


def loss_distill(probs: ProbsLike, labels, base_probs: ProbsLike, alpha: float) -> float:
    return cross_entropy(probs, distill_targets(labels, base_probs, alpha))


def loss_focal(
    probs: ProbsLike, labels, base_probs: ProbsLike, base_correct, alpha: float, epsilon: float = 1.0
) -> float:
    return cross_entropy(probs, focal_targets(labels, base_probs, base_correct, alpha, epsilon))


def soft_target_loss(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy computed from logits."""
    return -(targets * log_softmax(logits, axis=1)).sum(axis=1)


def soft_target_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample gradient of `soft_target_loss` w.r.t. the logits: p * sum(t) - t."""
    logp = log_softmax(logits, axis=1)
    p = np.exp(logp)
    return p * targets.sum(axis=1, keepdims=True) - targets
