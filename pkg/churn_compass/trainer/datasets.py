"""Small synthetic classification datasets for desk-scale experiments."""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import InvalidInputError, ShapeMismatchError, UsageError
from ..models import LabelVector, as_labels
from ..storage import load_labels, load_matrix

logger = logging.getLogger(__name__)


class DatasetKind(Enum):
    BLOBS = "blobs"
    SPIRALS = "spirals"
    FILE = "file"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with labels in [0, num_classes)."""
    features: np.ndarray
    labels: LabelVector
    num_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeMismatchError(f"features must be a non-empty 2-D array, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("features contain NaN or infinite values")
        labels = as_labels(self.labels, k=self.num_classes)
        if len(labels) != x.shape[0]:
            raise ShapeMismatchError(f"{len(labels)} labels for {x.shape[0]} feature rows")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], LabelVector(self.labels.labels[idx]), self.num_classes)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.dims != self.dims or other.num_classes != self.num_classes:
            raise ShapeMismatchError("datasets differ in dimensionality or class count")
        return Dataset(
            np.vstack([self.features, other.features]),
            LabelVector(np.concatenate([self.labels.labels, other.labels.labels])),
            self.num_classes,
        )


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column; constant columns are only centred."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return (x - mean) / std


def _blobs(n: int, rng: np.random.Generator, k: int, dims: int, cluster_std: float, spread: float):
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    angles = 2 * np.pi * np.arange(k) / k
    centers = np.zeros((k, dims))
    centers[:, 0] = spread * np.cos(angles)
    if dims > 1:
        centers[:, 1] = spread * np.sin(angles)
    if dims > 2:
        centers[:, 2:] = rng.uniform(-spread, spread, size=(k, dims - 2))
    x = np.vstack([centers[c] + cluster_std * rng.standard_normal((counts[c], dims)) for c in range(k)])
    y = np.repeat(np.arange(k), counts)
    return x, y


def _spirals(n: int, rng: np.random.Generator, noise: float, turns: float):
    counts = [n - n // 2, n // 2]
    parts, labels = [], []
    for c, m in enumerate(counts):
        t = np.sqrt(rng.uniform(0.0, 1.0, size=m)) * turns * 2 * np.pi
        r = t / (turns * 2 * np.pi)
        phase = np.pi * c
        pts = np.column_stack([r * np.cos(t + phase), r * np.sin(t + phase)])
        parts.append(pts + noise * rng.standard_normal(pts.shape))
        labels.append(np.full(m, c))
    return np.vstack(parts), np.concatenate(labels)


def synth_dataset(
    kind: Union[DatasetKind, str],
    n: int,
    seed: int = 0,
    num_classes: int = 2,
    dims: int = 2,
    cluster_std: float = 1.0,
    spread: float = 4.0,
    noise: float = 0.05,
    turns: float = 1.5,
    features_path: Optional[Union[str, Path]] = None,
    labels_path: Optional[Union[str, Path]] = None,
) -> Dataset:
    """Deterministic dataset with standardized features.

    Blobs are balanced Gaussian clusters whose centres sit on a circle;
    spirals are two interleaved arms (two classes); `file` draws a seeded
    random subset of n rows from a stored feature matrix and label vector.
    """
    kind = DatasetKind(kind)
    if n < 2:
        raise InvalidInputError(f"n must be at least 2, got {n}")
    rng = np.random.default_rng(seed)

    if kind is DatasetKind.BLOBS:
        if num_classes < 2 or dims < 1 or cluster_std <= 0:
            raise InvalidInputError("blobs need num_classes >= 2, dims >= 1 and cluster_std > 0")
        x, y = _blobs(n, rng, num_classes, dims, cluster_std, spread)
        k = num_classes
    elif kind is DatasetKind.SPIRALS:
        x, y = _spirals(n, rng, noise, turns)
        k = 2
    else:
        if features_path is None or labels_path is None:
            raise UsageError("the file dataset needs a feature matrix and a label file")
        features = load_matrix(features_path, kind="embeddings").data
        labels = load_labels(labels_path).labels
        if labels.shape[0] != features.shape[0]:
            raise ShapeMismatchError(f"{labels.shape[0]} labels for {features.shape[0]} feature rows")
        if n > features.shape[0]:
            raise InvalidInputError(f"asked for {n} samples from a file of {features.shape[0]}")
        idx = np.sort(rng.choice(features.shape[0], size=n, replace=False))
        x, y = features[idx], labels[idx]
        k = max(int(labels.max()) + 1, 2)

    logger.debug("synth %s: n=%d, k=%d, seed=%d", kind.value, n, k, seed)
    return Dataset(standardize(x), LabelVector(y), k)


def split_dataset(data: Dataset, sizes: Sequence[int], seed: int = 0) -> list[Dataset]:
    """Seeded random partition into consecutive parts of the given sizes."""
    if sum(sizes) > data.n or min(sizes) < 1:
        raise InvalidInputError(f"cannot split {data.n} samples into {list(sizes)}")
    order = np.random.default_rng(seed).permutation(data.n)
    parts, start = [], 0
    for size in sizes:
        parts.append(data.subset(order[start:start + size]))
        start += size
    return parts
