"""Per-sample scores s(f, x) used to choose between the base and new model.

Conf and AvgConf rank by prediction confidence; Entropy, Energy, KL-Div and
GradNorm are the out-of-distribution scores. Every score is oriented so that
larger means "more likely correct".
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from scipy.stats import pearsonr, spearmanr

from .core import log_softmax, softmax
from .errors import InvalidInputError, ShapeMismatchError, UsageError
from .models import (
    CheckpointSeries,
    EmbeddingMatrix,
    LogitMatrix,
    ScoreKind,
    ScoreVector,
    as_logits,
)

logger = logging.getLogger(__name__)

DEFAULT_KNN_K = 10

LogitsLike = Union[LogitMatrix, np.ndarray, list]


def conf_score(logits: LogitsLike) -> ScoreVector:
    """Top-class softmax probability."""
    return ScoreVector(softmax(logits).data.max(axis=1), ScoreKind.CONF)


def avgconf_exact(series: CheckpointSeries) -> ScoreVector:
    """Mean probability, over all epochs, of the class predicted at the final epoch."""
    if len(series) == 0:
        raise InvalidInputError("checkpoint series is empty")
    final_pred = np.argmax(series.final.data, axis=1)
    rows = np.arange(series.rows)
    total = np.zeros(series.rows, dtype=np.float64)
    for m in series.epochs:
        total += softmax(m).data[rows, final_pred]
    return ScoreVector(total / len(series), ScoreKind.AVGCONF)


def entropy_score(logits: LogitsLike) -> ScoreVector:
    """Negative entropy, sum_c p_c log p_c; underflowed p_c contribute 0."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    return ScoreVector(np.sum(p * logp, axis=1), ScoreKind.ENTROPY)


def energy_score(logits: LogitsLike) -> ScoreVector:
    """Negative free energy, log sum_c exp(z_c)."""
    z = as_logits(logits).data
    return ScoreVector(logsumexp(z, axis=1), ScoreKind.ENERGY)


def kldiv_score(logits: LogitsLike) -> ScoreVector:
    """KL(u || softmax(z)) with u uniform over the k classes."""
    logp = log_softmax(logits)
    k = logp.shape[1]
    return ScoreVector(-np.log(k) - logp.mean(axis=1), ScoreKind.KLDIV)


def gradnorm_score(logits: LogitsLike) -> ScoreVector:
    """L1 norm of d KL(u || softmax(z)) / dz, which is sum_c |p_c - 1/k|."""
    p = softmax(logits).data
    k = p.shape[1]
    return ScoreVector(np.abs(p - 1.0 / k).sum(axis=1), ScoreKind.GRADNORM)


LOGIT_SCORES: dict[ScoreKind, Callable[[LogitsLike], ScoreVector]] = {
    ScoreKind.CONF: conf_score,
    ScoreKind.ENTROPY: entropy_score,
    ScoreKind.ENERGY: energy_score,
    ScoreKind.KLDIV: kldiv_score,
    ScoreKind.GRADNORM: gradnorm_score,
}


def compute_scores(kind: ScoreKind, logits: LogitsLike) -> ScoreVector:
    """Score computable from a single logit matrix."""
    try:
        return LOGIT_SCORES[kind](logits)
    except KeyError:
        raise UsageError(f"{kind.value} needs a checkpoint series, not a logit matrix")


# ---------------------------------------------------------------------------
# kNN AvgConf
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AvgConfIndex:
    """Validation embeddings with their exact AvgConf, queried by k nearest neighbours."""
    embeddings: EmbeddingMatrix
    scores: ScoreVector
    k: int = DEFAULT_KNN_K
    tree: Optional[cKDTree] = None

    def __post_init__(self):
        if self.embeddings.rows != len(self.scores):
            raise ShapeMismatchError(
                f"{self.embeddings.rows} embeddings for {len(self.scores)} scores"
            )
        if not 1 <= self.k <= self.embeddings.rows:
            raise InvalidInputError(f"k must be in [1, {self.embeddings.rows}], got {self.k}")

    @property
    def dims(self) -> int:
        return self.embeddings.dims


def knn_avgconf_fit(
    embeddings: EmbeddingMatrix,
    series: CheckpointSeries,
    k: int = DEFAULT_KNN_K,
    use_tree: bool = False,
) -> AvgConfIndex:
    """Store validation embeddings with their exact AvgConf scores."""
    if embeddings.rows != series.rows:
        raise ShapeMismatchError(
            f"{embeddings.rows} embeddings for a series over {series.rows} samples"
        )
    if not 1 <= k <= embeddings.rows:
        raise InvalidInputError(f"k must be in [1, {embeddings.rows}], got {k}")
    scores = avgconf_exact(series)
    tree = cKDTree(embeddings.data) if use_tree else None
    return AvgConfIndex(embeddings=embeddings, scores=scores, k=k, tree=tree)


def _squared_distances(points: np.ndarray, query_row: np.ndarray) -> np.ndarray:
    # Both search paths go through here so that tie handling sees identical values.
    return cdist(points, query_row[None, :], "sqeuclidean")[:, 0]


def _ball_mean(d2: np.ndarray, scores: np.ndarray, k: int) -> float:
    radius = np.partition(d2, k - 1)[k - 1]
    inside = d2 <= radius
    return float(scores[inside].mean())


def knn_avgconf_estimate(
    index: AvgConfIndex, query: EmbeddingMatrix, use_tree: Optional[bool] = None
) -> ScoreVector:
    """Mean AvgConf of the k nearest validation embeddings, ties at the k-th distance included."""
    if query.dims != index.dims:
        raise ShapeMismatchError(f"query has {query.dims} dims, index has {index.dims}")
    use_tree = index.tree is not None if use_tree is None else use_tree
    tree = index.tree if index.tree is not None or not use_tree else cKDTree(index.embeddings.data)
    points = index.embeddings.data
    scores = index.scores.values
    out = np.empty(query.rows, dtype=np.float64)
    for i, q in enumerate(query.data):
        if tree is None:
            out[i] = _ball_mean(_squared_distances(points, q), scores, index.k)
            continue
        dist, _ = tree.query(q, k=index.k)
        kth = float(np.atleast_1d(dist)[-1])
        # Widen the ball slightly, then decide membership with the exact routine.
        cand = np.sort(np.asarray(tree.query_ball_point(q, kth * (1 + 1e-9) + 1e-12), dtype=np.int64))
        if cand.size < index.k:
            cand = np.arange(points.shape[0])
        out[i] = _ball_mean(_squared_distances(points[cand], q), scores[cand], index.k)
    return ScoreVector(np.clip(out, 0.0, 1.0), ScoreKind.AVGCONF)


def score_correlation(exact: ScoreVector, estimated: ScoreVector) -> dict:
    """Pearson and Spearman correlation between two score vectors."""
    if len(exact) != len(estimated):
        raise ShapeMismatchError(f"{len(exact)} vs {len(estimated)} scores")
    return {
        "pearson": float(pearsonr(exact.values, estimated.values)[0]),
        "spearman": float(spearmanr(exact.values, estimated.values)[0]),
    }
