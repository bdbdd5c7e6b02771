"""Core data structures for Churn Compass.

All types are immutable after construction: array fields are copied into
read-only float64/int64 arrays so instances can be shared freely.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from .errors import (
    InvalidInputError,
    LabelRangeError,
    NonFiniteError,
    ShapeMismatchError,
)


def _frozen(values: Any, dtype: Any, name: str, ndim: int) -> np.ndarray:
    """Copy values into a read-only array of the given dtype and rank."""
    try:
        arr = np.array(values, dtype=dtype, copy=True)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name}: cannot convert to {np.dtype(dtype).name} array: {e}")
    if arr.ndim != ndim:
        raise ShapeMismatchError(f"{name}: expected a {ndim}-D array, got shape {arr.shape}")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains NaN or infinite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LogitMatrix:
    """n x k pre-softmax model outputs."""
    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data, np.float64, "logits", 2)
        if arr.shape[0] < 1:
            raise ShapeMismatchError("logits: need at least one row")
        if arr.shape[1] < 2:
            raise ShapeMismatchError(f"logits: need at least two classes, got {arr.shape[1]}")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """n x d feature embeddings, e.g. last-hidden-layer activations."""
    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data, np.float64, "embeddings", 2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatchError(f"embeddings: empty matrix of shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ProbMatrix:
    """Row-stochastic matrix, same shape as the logits it came from."""
    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data, np.float64, "probabilities", 2)
        if arr.size and (arr.min() < -1e-12 or arr.max() > 1 + 1e-12):
            raise InvalidInputError("probabilities: entries must lie in [0, 1]")
        if not np.allclose(arr.sum(axis=1), 1.0, atol=1e-6, rtol=0.0):
            raise InvalidInputError("probabilities: rows must sum to 1")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class LabelVector:
    """0-based class index per sample."""
    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.size and arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise InvalidInputError("labels: must be integers")
        arr = _frozen(arr, np.int64, "labels", 1)
        if arr.size and arr.min() < 0:
            raise LabelRangeError(f"labels: negative class index {int(arr.min())}")
        object.__setattr__(self, "labels", arr)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def check_range(self, k: int) -> None:
        """Raise LabelRangeError unless every label is < k."""
        if len(self) and int(self.labels.max()) >= k:
            bad = int(np.argmax(self.labels >= k))
            raise LabelRangeError(
                f"label {int(self.labels[bad])} at index {bad} is out of range for k={k}"
            )


def validate_bundle(bundle: "PredictionBundle") -> None:
    """Check every PredictionBundle invariant; return None when all hold."""
    base, new, labels = bundle.base, bundle.new, bundle.labels
    if base.cols != new.cols:
        raise ShapeMismatchError(f"base has {base.cols} classes but new has {new.cols}")
    if base.rows != new.rows:
        raise ShapeMismatchError(f"base has {base.rows} rows but new has {new.rows}")
    if len(labels) != base.rows:
        raise ShapeMismatchError(f"{len(labels)} labels for {base.rows} rows")
    for name, m in (("base", base), ("new", new)):
        if not np.all(np.isfinite(m.data)):
            raise NonFiniteError(f"{name} logits contain NaN or infinite values")
    labels.check_range(base.cols)


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    """Paired base/new logits plus ground truth over one evaluation set."""
    base: LogitMatrix
    new: LogitMatrix
    labels: LabelVector

    def __post_init__(self):
        validate_bundle(self)

    @property
    def n(self) -> int:
        return self.base.rows

    @property
    def k(self) -> int:
        return self.base.cols

    def subset(self, indices: Sequence[int]) -> "PredictionBundle":
        idx = np.asarray(indices, dtype=np.int64)
        return PredictionBundle(
            base=LogitMatrix(self.base.data[idx]),
            new=LogitMatrix(self.new.data[idx]),
            labels=LabelVector(self.labels.labels[idx]),
        )


@dataclass(frozen=True, eq=False)
class CheckpointSeries:
    """Per-epoch logits of one model over one fixed set, epochs 1..T."""
    epochs: tuple[LogitMatrix, ...]

    def __post_init__(self):
        epochs = tuple(
            m if isinstance(m, LogitMatrix) else LogitMatrix(m) for m in self.epochs
        )
        if not epochs:
            raise InvalidInputError("checkpoint series is empty")
        shape = epochs[0].shape
        for t, m in enumerate(epochs, start=1):
            if m.shape != shape:
                raise ShapeMismatchError(f"epoch {t} has shape {m.shape}, epoch 1 has {shape}")
        object.__setattr__(self, "epochs", epochs)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def rows(self) -> int:
        return self.epochs[0].rows

    @property
    def cols(self) -> int:
        return self.epochs[0].cols

    @property
    def final(self) -> LogitMatrix:
        return self.epochs[-1]

    def stacked(self) -> np.ndarray:
        """T x n x k array of all epochs."""
        return np.stack([m.data for m in self.epochs])

    def select_rows(self, indices: Sequence[int]) -> "CheckpointSeries":
        idx = np.asarray(indices, dtype=np.int64)
        return CheckpointSeries(tuple(LogitMatrix(m.data[idx]) for m in self.epochs))


class ScoreKind(Enum):
    """Per-sample scoring function."""
    CONF = "conf"
    AVGCONF = "avgconf"
    ENTROPY = "entropy"
    ENERGY = "energy"
    KLDIV = "kldiv"
    GRADNORM = "gradnorm"


_UNIT_INTERVAL_SCORES = (ScoreKind.CONF, ScoreKind.AVGCONF)


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """One score per sample, tagged with the scoring function that produced it."""
    values: np.ndarray
    kind: ScoreKind

    def __post_init__(self):
        arr = _frozen(self.values, np.float64, f"{self.kind.value} scores", 1)
        if self.kind in _UNIT_INTERVAL_SCORES and arr.size:
            if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
                raise InvalidInputError(f"{self.kind.value} scores must lie in [0, 1]")
            arr = np.clip(arr, 0.0, 1.0)
            arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.shape[0])


class Choice(Enum):
    """Which model a selection meta-model uses for a sample."""
    USE_NEW = "new"
    USE_BASE = "base"


@dataclass(frozen=True, eq=False)
class ChoiceVector:
    """Per-sample model choice; True means use the new model."""
    use_new: np.ndarray

    def __post_init__(self):
        arr = np.array(self.use_new, dtype=bool, copy=True)
        if arr.ndim != 1:
            raise ShapeMismatchError(f"choices: expected 1-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "use_new", arr)

    def __len__(self) -> int:
        return int(self.use_new.shape[0])

    def __getitem__(self, i: int) -> Choice:
        return Choice.USE_NEW if self.use_new[i] else Choice.USE_BASE

    @classmethod
    def all_base(cls, n: int) -> "ChoiceVector":
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def all_new(cls, n: int) -> "ChoiceVector":
        return cls(np.ones(n, dtype=bool))

    @property
    def count_new(self) -> int:
        return int(self.use_new.sum())


@dataclass(frozen=True)
class FlipReport:
    """Churn and flip decomposition between a base and a new model."""
    n: int
    churn: float
    relevant_churn: float
    negative_flips: int
    positive_flips: int
    benign_flips: int
    accuracy_base: float
    accuracy_new: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "churn": self.churn,
            "relevant_churn": self.relevant_churn,
            "negative_flips": self.negative_flips,
            "positive_flips": self.positive_flips,
            "benign_flips": self.benign_flips,
            "accuracy_base": self.accuracy_base,
            "accuracy_new": self.accuracy_new,
        }


@dataclass(frozen=True)
class FlipOverlap:
    """Overlap of the NF and PF sets eliminated by two choice vectors."""
    nf_both: int
    nf_only_a: int
    nf_only_b: int
    pf_both: int
    pf_only_a: int
    pf_only_b: int

    def to_dict(self) -> dict:
        return {
            "nf_both": self.nf_both,
            "nf_only_a": self.nf_only_a,
            "nf_only_b": self.nf_only_b,
            "pf_both": self.pf_both,
            "pf_only_a": self.pf_only_a,
            "pf_only_b": self.pf_only_b,
        }


@dataclass(frozen=True, eq=False)
class ForgettingRecord:
    """Forgetting events per sample across a checkpoint series."""
    counts: np.ndarray
    unforgettable: frozenset

    def to_dict(self) -> dict:
        return {
            "n": int(self.counts.shape[0]),
            "total_events": int(self.counts.sum()),
            "forgotten_samples": int((self.counts > 0).sum()),
            "unforgettable_samples": len(self.unforgettable),
            "counts": [int(c) for c in self.counts],
            "unforgettable": sorted(int(i) for i in self.unforgettable),
        }


class MetaKind(Enum):
    """Architecture of a learned combiner h."""
    LINEAR_LOGISTIC = "linear_logistic"
    ONE_HIDDEN_NET = "one_hidden_net"


@dataclass(frozen=True, eq=False)
class MetaModel:
    """Fitted combiner mapping [f_b(x); f_n(x)] (2k inputs) to k logits."""
    kind: MetaKind
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    hyperparameters: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        weights = tuple(_frozen(w, np.float64, "meta weights", 2) for w in self.weights)
        biases = tuple(_frozen(b, np.float64, "meta biases", 1) for b in self.biases)
        expected_layers = 1 if self.kind is MetaKind.LINEAR_LOGISTIC else 2
        if len(weights) != expected_layers or len(biases) != expected_layers:
            raise ShapeMismatchError(
                f"{self.kind.value} needs {expected_layers} layer(s), got {len(weights)}"
            )
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape[1] != b.shape[0]:
                raise ShapeMismatchError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i > 0 and weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatchError(f"layer {i}: input {w.shape[0]} does not chain")
        if weights[0].shape[0] != 2 * weights[-1].shape[1]:
            raise ShapeMismatchError(
                f"input dim {weights[0].shape[0]} must be twice output dim {weights[-1].shape[1]}"
            )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_units(self) -> int:
        return self.weights[0].shape[1] if self.kind is MetaKind.ONE_HIDDEN_NET else 0


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    empirical_accuracy: float

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "mean_confidence": self.mean_confidence,
            "empirical_accuracy": self.empirical_accuracy,
        }


@dataclass(frozen=True)
class ReliabilityTable:
    """Equal-width confidence bins with ECE and MCE."""
    bins: tuple[ReliabilityBin, ...]
    ece: float
    mce: float

    @property
    def n(self) -> int:
        return sum(b.count for b in self.bins)

    def to_dict(self) -> dict:
        return {
            "ece": self.ece,
            "mce": self.mce,
            "n": self.n,
            "bins": [b.to_dict() for b in self.bins],
        }


@dataclass(frozen=True)
class SwitchCounts:
    benign: int = 0
    good: int = 0
    bad: int = 0

    @property
    def total(self) -> int:
        return self.benign + self.good + self.bad

    def to_dict(self) -> dict:
        return {"benign": self.benign, "good": self.good, "bad": self.bad}


@dataclass(frozen=True)
class RankingChangeReport:
    """Conf-selection switches caused by temperature scaling."""
    switch_to_base: SwitchCounts
    switch_to_new: SwitchCounts

    @property
    def total(self) -> int:
        return self.switch_to_base.total + self.switch_to_new.total

    def to_dict(self) -> dict:
        return {
            "switch_to_base": self.switch_to_base.to_dict(),
            "switch_to_new": self.switch_to_new.to_dict(),
            "total": self.total,
        }


def as_logits(value: Any) -> LogitMatrix:
    """Accept a LogitMatrix or anything array-like and return a LogitMatrix."""
    return value if isinstance(value, LogitMatrix) else LogitMatrix(value)


def as_probs(value: Any) -> ProbMatrix:
    return value if isinstance(value, ProbMatrix) else ProbMatrix(value)


def as_labels(value: Any, k: Optional[int] = None) -> LabelVector:
    labels = value if isinstance(value, LabelVector) else LabelVector(value)
    if k is not None:
        labels.check_range(k)
    return labels
