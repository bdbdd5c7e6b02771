"""Training loop for the Cold, Warm Start, Distillation and Focal baselines."""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from ..core import hard_predict, softmax
from ..errors import ConfigError, DivergenceError, ShapeMismatchError, UsageError
from ..models import CheckpointSeries, LogitMatrix, as_logits
from .datasets import Dataset
from .losses import distill_targets, focal_targets, one_hot, soft_target_grad, soft_target_loss
from .network import MlpNet, backward, forward, init_mlp, per_sample_gradients, predict_logits
from .qp import dual_qp_solve

logger = logging.getLogger(__name__)


class TrainMode(Enum):
    COLD = "cold"
    WARM_START = "warm"
    DISTILL = "distill"
    FOCAL = "focal"


class OptimizerKind(Enum):
    GD = "gd"
    ADAM = "adam"


@dataclass(frozen=True)
class NetSpec:
    """Layer widths of an MLP: input, hidden..., output."""
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (32, 32)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @classmethod
    def for_data(cls, data: Dataset, hidden: tuple[int, ...] = (32, 32)) -> "NetSpec":
        return cls(input_dim=data.dims, output_dim=data.num_classes, hidden=tuple(hidden))


@dataclass(frozen=True)
class TrainConfig:
    """How one model is trained. Adam defaults follow the usual 0.001 / batch 32 recipe."""
    mode: TrainMode = TrainMode.COLD
    alpha: float = 0.0
    epsilon: float = 1.0
    optimizer: OptimizerKind = OptimizerKind.GD
    lr: float = 0.05
    batch_size: int = 32
    unit_norm: bool = False
    epochs: int = 100
    patience: Optional[int] = None
    seed: int = 0
    constrained: bool = False
    hidden: tuple[int, ...] = (32, 32)
    qp_tol: float = 1e-6
    qp_max_iter: int = 20000

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")
        if self.constrained and self.optimizer is not OptimizerKind.GD:
            raise ConfigError("constrained training needs full-batch gradient descent")

    def with_overrides(self, **changes) -> "TrainConfig":
        """Copy with the given fields replaced; None values are ignored."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None or self.v is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True, eq=False)
class TrainResult:
    """Trained net, per-epoch monitoring-set logits and the epoch history."""
    net: MlpNet
    series: CheckpointSeries
    initial_logits: LogitMatrix
    history: tuple[dict, ...] = field(default_factory=tuple)
    best_epoch: Optional[int] = None

    def __iter__(self):
        yield self.net
        yield self.series


def training_targets(
    data: Dataset, cfg: TrainConfig, base_logits: Optional[LogitMatrix] = None
) -> np.ndarray:
    """Soft targets every sample is trained against under `cfg.mode`."""
    if cfg.mode in (TrainMode.COLD, TrainMode.WARM_START):
        return one_hot(data.labels, data.num_classes)
    if base_logits is None:
        raise UsageError(f"{cfg.mode.value} training needs base logits on the training set")
    base = as_logits(base_logits)
    if base.shape != (data.n, data.num_classes):
        raise ShapeMismatchError(f"base logits {base.shape} for {data.n} x {data.num_classes} data")
    base_probs = softmax(base)
    if cfg.mode is TrainMode.DISTILL:
        return distill_targets(data.labels, base_probs, cfg.alpha)
    base_correct = hard_predict(base).labels == data.labels.labels
    return focal_targets(data.labels, base_probs, base_correct, cfg.alpha, cfg.epsilon)


def _full_batch_direction(
    net: MlpNet, x: np.ndarray, targets: np.ndarray, cfg: TrainConfig, warm: Optional[np.ndarray]
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if cfg.constrained:
        gradset = per_sample_gradients(net, x, targets=targets)
        sol = dual_qp_solve(gradset, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, warm_start=warm)
        return sol.g_tilde, sol.lam
    dz = soft_target_grad(forward(net, x), targets) / x.shape[0]
    return backward(net, x, dz), None


def train(
    data: Dataset,
    net_spec: NetSpec,
    cfg: TrainConfig,
    base: Optional[MlpNet] = None,
    base_logits: Optional[LogitMatrix] = None,
    monitor: Optional[Dataset] = None,
) -> TrainResult:
    """Train one model and record its logits on the monitoring set after every epoch.

    Warm Start needs `base`; Distill and Focal need `base_logits` on the
    training set. With `cfg.patience` set, training stops once monitoring-set
    accuracy has not improved for that many epochs; the best epoch's weights
    are restored and the series ends at that epoch.

    Raises:
        UsageError: a mode's base inputs are missing.
        DivergenceError: the loss or gradient became non-finite.
    """
    if cfg.mode is TrainMode.WARM_START:
        if base is None:
            raise UsageError("warm-start training needs a base model")
        if base.sizes != net_spec.sizes:
            raise ShapeMismatchError(f"base net {base.sizes} does not match {net_spec.sizes}")
    targets = training_targets(data, cfg, base_logits)

    rng = np.random.default_rng(cfg.seed)
    net = base if cfg.mode is TrainMode.WARM_START else init_mlp(net_spec.sizes, rng)
    assert net is not None
    monitor = monitor or data
    x = data.features

    initial_logits = predict_logits(net, monitor.features)
    params = net.flatten()
    adam = Adam(lr=cfg.lr) if cfg.optimizer is OptimizerKind.ADAM else None
    lam: Optional[np.ndarray] = None

    epochs: list[LogitMatrix] = []
    history: list[dict] = []
    best_acc, best_epoch, best_params = -1.0, 0, params

    for epoch in range(1, cfg.epochs + 1):
        if adam is None:
            step, lam = _full_batch_direction(net, x, targets, cfg, lam)
            if cfg.unit_norm:
                norm = np.linalg.norm(step)
                step = step / norm if norm > 0 else step
            params = params - cfg.lr * step
        else:
            order = rng.permutation(data.n)
            for start in range(0, data.n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb = x[idx]
                dz = soft_target_grad(forward(net, xb), targets[idx]) / idx.shape[0]
                params = adam.step(params, backward(net, xb, dz))
                if not np.all(np.isfinite(params)):
                    raise DivergenceError("non-finite parameters", epoch=epoch)
                net = net.with_params(params)
        if not np.all(np.isfinite(params)):
            raise DivergenceError("non-finite parameters", epoch=epoch)
        net = net.with_params(params)

        train_logits = forward(net, x)
        loss = float(soft_target_loss(train_logits, targets).mean())
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became {loss}", epoch=epoch)
        monitor_logits = forward(net, monitor.features)
        epochs.append(LogitMatrix(monitor_logits))
        monitor_acc = float(np.mean(np.argmax(monitor_logits, axis=1) == monitor.labels.labels))
        record = {
            "epoch": epoch,
            "loss": loss,
            "train_accuracy": float(np.mean(np.argmax(train_logits, axis=1) == data.labels.labels)),
            "monitor_accuracy": monitor_acc,
        }
        history.append(record)
        logger.debug("epoch %d: loss %.6f, monitor accuracy %.4f", epoch, loss, monitor_acc)

        if cfg.patience is not None:
            if monitor_acc > best_acc:
                best_acc, best_epoch, best_params = monitor_acc, epoch, params
            elif epoch - best_epoch >= cfg.patience:
                logger.info("early stop at epoch %d, best epoch %d", epoch, best_epoch)
                break

    if cfg.patience is not None:
        net = net.with_params(best_params)
        epochs = epochs[:best_epoch]
    return TrainResult(
        net=net,
        series=CheckpointSeries(tuple(epochs)),
        initial_logits=initial_logits,
        history=tuple(history),
        best_epoch=best_epoch if cfg.patience is not None else None,
    )
