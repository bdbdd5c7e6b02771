"""Feedforward ReLU classifier with exact backpropagation and per-sample gradients."""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import DivergenceError, NonFiniteError, ShapeMismatchError, InvalidInputError
from ..models import EmbeddingMatrix, LogitMatrix
from .losses import one_hot, soft_target_grad

SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class MlpNet:
    """Weights are (fan_in, fan_out); ReLU on hidden layers, identity on the output."""
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise ShapeMismatchError(f"{len(weights)} weight matrices for {len(biases)} bias vectors")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeMismatchError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatchError(f"layer {i}: input {w.shape[0]} does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {i}: non-finite parameters")
        for arr in weights + biases:
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        """Parameters as one vector: W0, b0, W1, b1, ..."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_params(self, flat: np.ndarray) -> "MlpNet":
        """Same architecture, parameters taken from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ShapeMismatchError(f"expected {self.n_params} parameters, got {flat.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(flat[pos:pos + b.size])
            pos += b.size
        return MlpNet(tuple(weights), tuple(biases))


def init_mlp(sizes: Sequence[int], seed: SeedLike = 0) -> MlpNet:
    """He-normal weights, zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidInputError(f"invalid layer sizes {sizes}")
    rng = _rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpNet(tuple(weights), tuple(biases))


def _check_features(net: MlpNet, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeMismatchError(f"features of shape {x.shape} for a net with input {net.input_dim}")
    return x


def _activations(net: MlpNet, x: np.ndarray) -> list[np.ndarray]:
    """[x, h_1, ..., h_L, logits]."""
    acts = [x]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.maximum(z, 0.0))
    return acts


def forward(net: MlpNet, features: np.ndarray) -> np.ndarray:
    return _activations(net, _check_features(net, features))[-1]


def predict_logits(net: MlpNet, features: np.ndarray) -> LogitMatrix:
    return LogitMatrix(forward(net, features))


def embed(net: MlpNet, features: np.ndarray) -> EmbeddingMatrix:
    """Last-hidden-layer activations; the input itself for a net without hidden layers."""
    acts = _activations(net, _check_features(net, features))
    return EmbeddingMatrix(acts[-2])


def backward(net: MlpNet, features: np.ndarray, dlogits: np.ndarray) -> np.ndarray:
    """Flat parameter gradient for an upstream gradient on the logits, summed over rows."""
    acts = _activations(net, _check_features(net, features))
    delta = np.asarray(dlogits, dtype=np.float64)
    grads: list[np.ndarray] = []
    for i in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append((acts[i].T @ delta).ravel())
        if i:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0)
    return np.concatenate(grads[::-1])


@dataclass(frozen=True, eq=False)
class GradientSet:
    """Per-sample flattened gradients (n x P) and their mean."""
    per_sample: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        if self.per_sample.ndim != 2 or self.mean.shape != (self.per_sample.shape[1],):
            raise ShapeMismatchError(
                f"per-sample gradients {self.per_sample.shape} vs mean {self.mean.shape}"
            )

    @property
    def n(self) -> int:
        return self.per_sample.shape[0]

    @property
    def n_params(self) -> int:
        return self.per_sample.shape[1]

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "GradientSet":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ShapeMismatchError(f"need a non-empty n x P array, got shape {rows.shape}")
        return cls(per_sample=rows, mean=rows.mean(axis=0))


def per_sample_gradients(
    net: MlpNet,
    features: np.ndarray,
    labels: Optional[np.ndarray] = None,
    targets: Optional[np.ndarray] = None,
) -> GradientSet:
    """Exact gradient of each sample's cross-entropy, against hard labels or soft targets."""
    x = _check_features(net, features)
    if targets is None:
        if labels is None:
            raise InvalidInputError("per_sample_gradients needs labels or targets")
        targets = one_hot(labels, net.output_dim)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (x.shape[0], net.output_dim):
        raise ShapeMismatchError(f"targets {targets.shape} for {x.shape[0]} samples")

    acts = _activations(net, x)
    delta = soft_target_grad(acts[-1], targets)
    n = x.shape[0]
    blocks: list[np.ndarray] = []
    for i in range(len(net.weights) - 1, -1, -1):
        blocks.append(delta)
        blocks.append(np.einsum("ni,nj->nij", acts[i], delta).reshape(n, -1))
        if i:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0)
    rows = np.concatenate(blocks[::-1], axis=1)
    if not np.all(np.isfinite(rows)):
        raise DivergenceError("non-finite per-sample gradient")
    return GradientSet.from_rows(rows)
