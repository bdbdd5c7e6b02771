"""Churn, relevant churn, flip decomposition and forgetting statistics."""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import hard_predict, softmax
from .errors import InvalidInputError, ShapeMismatchError
from .models import (
    ChoiceVector,
    CheckpointSeries,
    FlipOverlap,
    FlipReport,
    ForgettingRecord,
    LabelVector,
    PredictionBundle,
    ScoreVector,
    as_labels,
    validate_bundle,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class _FlipMasks:
    base_correct: np.ndarray
    new_correct: np.ndarray
    disagree: np.ndarray

    @property
    def negative(self) -> np.ndarray:
        return self.base_correct & ~self.new_correct

    @property
    def positive(self) -> np.ndarray:
        return ~self.base_correct & self.new_correct

    @property
    def benign(self) -> np.ndarray:
        return self.disagree & ~self.base_correct & ~self.new_correct


def _masks(bundle: PredictionBundle) -> _FlipMasks:
    validate_bundle(bundle)
    y = bundle.labels.labels
    pb = hard_predict(bundle.base).labels
    pn = hard_predict(bundle.new).labels
    return _FlipMasks(base_correct=pb == y, new_correct=pn == y, disagree=pb != pn)


def churn(bundle: PredictionBundle) -> float:
    """Fraction of samples where the two hard predictions differ."""
    return float(_masks(bundle).disagree.sum()) / bundle.n


def relevant_churn(bundle: PredictionBundle) -> float:
    """Negative flip rate: base right, new different (hence wrong)."""
    return float(_masks(bundle).negative.sum()) / bundle.n


def negative_flip_mask(bundle: PredictionBundle) -> np.ndarray:
    return _masks(bundle).negative


def positive_flip_mask(bundle: PredictionBundle) -> np.ndarray:
    return _masks(bundle).positive


def flip_decomposition(bundle: PredictionBundle) -> FlipReport:
    """Split disagreements into negative, positive and benign flips."""
    m = _masks(bundle)
    n = bundle.n
    nf = int(m.negative.sum())
    pf = int(m.positive.sum())
    benign = int(m.benign.sum())
    return FlipReport(
        n=n,
        churn=float(m.disagree.sum()) / n,
        relevant_churn=nf / n,
        negative_flips=nf,
        positive_flips=pf,
        benign_flips=benign,
        accuracy_base=float(m.base_correct.sum()) / n,
        accuracy_new=float(m.new_correct.sum()) / n,
    )


def flip_overlap(
    bundle: PredictionBundle, choices_a: ChoiceVector, choices_b: ChoiceVector
) -> FlipOverlap:
    """Compare the NFs and PFs of the unmodified new model that each choice vector removes.

    A flip is eliminated when the choice vector reverts that sample to the
    base model.
    """
    m = _masks(bundle)
    for name, c in (("choices_a", choices_a), ("choices_b", choices_b)):
        if len(c) != bundle.n:
            raise ShapeMismatchError(f"{name} has {len(c)} entries for {bundle.n} samples")
    reverted_a = ~choices_a.use_new
    reverted_b = ~choices_b.use_new

    def split(flips: np.ndarray) -> tuple[int, int, int]:
        a = flips & reverted_a
        b = flips & reverted_b
        return int((a & b).sum()), int((a & ~b).sum()), int((b & ~a).sum())

    nf_both, nf_a, nf_b = split(m.negative)
    pf_both, pf_a, pf_b = split(m.positive)
    return FlipOverlap(
        nf_both=nf_both, nf_only_a=nf_a, nf_only_b=nf_b,
        pf_both=pf_both, pf_only_a=pf_a, pf_only_b=pf_b,
    )


def forgetting_events(
    series: CheckpointSeries, labels: Union[LabelVector, np.ndarray, list]
) -> ForgettingRecord:
    """Count correct-to-incorrect transitions between consecutive epochs."""
    y = as_labels(labels).labels
    if y.shape[0] != series.rows:
        raise ShapeMismatchError(f"{y.shape[0]} labels for a series over {series.rows} samples")
    as_labels(labels, k=series.cols)
    correct = np.argmax(series.stacked(), axis=2) == y[None, :]
    events = (correct[:-1] & ~correct[1:]).sum(axis=0).astype(np.int64)
    unforgettable = np.flatnonzero((events == 0) & correct[-1])
    logger.debug(
        "forgetting: %d events over %d epochs, %d unforgettable",
        int(events.sum()), len(series), unforgettable.size,
    )
    return ForgettingRecord(counts=events, unforgettable=frozenset(int(i) for i in unforgettable))


def irreducible_nf_estimate(
    bundle: PredictionBundle, scores_base: ScoreVector, scores_new: ScoreVector
) -> float:
    """Expected NFs a confidence comparison cannot remove: sum of s_b * (1 - s_n) over NFs."""
    for name, s in (("scores_base", scores_base), ("scores_new", scores_new)):
        if len(s) != bundle.n:
            raise ShapeMismatchError(f"{name} has {len(s)} entries for {bundle.n} samples")
        if s.values.min() < 0.0 or s.values.max() > 1.0:
            raise InvalidInputError(f"{name} must lie in [0, 1]")
    nf = negative_flip_mask(bundle)
    sb = scores_base.values[nf]
    sn = scores_new.values[nf]
    return float(np.sum(sb * (1.0 - sn)))


@dataclass(frozen=True, eq=False)
class ConfIrreducibleFlips:
    """Negative flips on which the new model is strictly more confident than the base."""
    indices: np.ndarray
    conf_base: np.ndarray
    conf_new: np.ndarray

    @property
    def count(self) -> int:
        return int(self.indices.shape[0])

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_conf_base": float(self.conf_base.mean()) if self.count else 0.0,
            "mean_conf_new": float(self.conf_new.mean()) if self.count else 0.0,
        }


def conf_irreducible_flips(bundle: PredictionBundle) -> ConfIrreducibleFlips:
    nf = negative_flip_mask(bundle)
    cb = softmax(bundle.base).data.max(axis=1)
    cn = softmax(bundle.new).data.max(axis=1)
    idx = np.flatnonzero(nf & (cn > cb))
    return ConfIrreducibleFlips(indices=idx, conf_base=cb[idx], conf_new=cn[idx])
