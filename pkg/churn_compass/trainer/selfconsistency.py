"""Full-batch training that tracks forgetting and gradient incompatibility every epoch.

With ``constrained`` set, each step is the projection of the batch gradient
onto the cone that does not increase any single sample's loss to first order.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DivergenceError, InvalidInputError
from .datasets import Dataset
from .losses import one_hot, soft_target_loss
from .network import forward, init_mlp, per_sample_gradients
from .qp import compatibility, dual_qp_solve
from .training import NetSpec

logger = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "epoch",
    "accuracy",
    "loss",
    "new_nfs",
    "cumulative_nfs",
    "incompatible_pre",
    "incompatible_post",
    "cos_min",
    "cos_q05",
    "cos_q50",
    "cos_q95",
    "frac_negative",
    "step_norm",
    "loss_increased",
    "qp_iterations",
)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    accuracy: float
    loss: float
    new_nfs: int
    cumulative_nfs: int
    incompatible_pre: int
    incompatible_post: int
    cos_min: float
    cos_q05: float
    cos_q50: float
    cos_q95: float
    frac_negative: float
    step_norm: float
    loss_increased: bool
    qp_iterations: int

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in TRACE_COLUMNS}


@dataclass(frozen=True)
class SelfConsistencyTrace:
    n: int
    constrained: bool
    unit_norm: bool
    lr: float
    seed: int
    records: tuple[EpochRecord, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.records)

    def summary(self) -> dict:
        recs = self.records
        post = [r.incompatible_post for r in recs]
        pre = [r.incompatible_pre for r in recs]
        return {
            "epochs": len(recs),
            "n": self.n,
            "constrained": self.constrained,
            "unit_norm": self.unit_norm,
            "lr": self.lr,
            "seed": self.seed,
            "final_accuracy": recs[-1].accuracy if recs else None,
            "final_loss": recs[-1].loss if recs else None,
            "cumulative_nfs": recs[-1].cumulative_nfs if recs else 0,
            "max_incompatible_fraction_pre": max(pre) / self.n if recs else 0.0,
            "max_incompatible_fraction_post": max(post) / self.n if recs else 0.0,
            "loss_increases": sum(r.loss_increased for r in recs),
            "first_epoch_at_full_accuracy": next(
                (r.epoch for r in recs if r.accuracy >= 1.0), None
            ),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            row = []
            for name in TRACE_COLUMNS:
                value = getattr(r, name)
                if isinstance(value, bool):
                    row.append(int(value))
                elif isinstance(value, float):
                    row.append(f"{value:.6g}")
                else:
                    row.append(value)
            writer.writerow(row)
        return buf.getvalue()


def _cos_summary(cos: np.ndarray) -> tuple[float, float, float, float, float]:
    if cos.size == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    q05, q50, q95 = np.quantile(cos, [0.05, 0.5, 0.95])
    return float(cos.min()), float(q05), float(q50), float(q95), float(np.mean(cos < 0))


def self_consistency_run(
    data: Dataset,
    net_spec: NetSpec,
    lr: float,
    epochs: int,
    constrained: bool = False,
    unit_norm: bool = False,
    seed: int = 0,
    qp_tol: float = 1e-6,
    qp_max_iter: int = 20000,
) -> SelfConsistencyTrace:
    """Train with full-batch steps and record per-epoch flips and incompatibility.

    Negative flips are counted on the training set against the previous
    epoch. ``incompatible_pre`` counts samples whose gradient opposes the
    plain batch gradient; ``incompatible_post`` counts those opposing the
    step actually taken, with cosines down to -qp_tol accepted as round-off.
    """
    if lr < 0:
        raise InvalidInputError(f"lr must be non-negative, got {lr}")
    if epochs < 0:
        raise InvalidInputError(f"epochs must be non-negative, got {epochs}")

    rng = np.random.default_rng(seed)
    net = init_mlp(net_spec.sizes, rng)
    x = data.features
    y = data.labels.labels
    targets = one_hot(data.labels, data.num_classes)

    logits = forward(net, x)
    prev_correct = np.argmax(logits, axis=1) == y
    prev_loss = float(soft_target_loss(logits, targets).mean())
    lam: Optional[np.ndarray] = None
    cumulative = 0
    records: list[EpochRecord] = []

    for epoch in range(1, epochs + 1):
        gradset = per_sample_gradients(net, x, targets=targets)
        pre = compatibility(gradset)
        step = gradset.mean
        post_count = pre.count
        qp_iterations = 0
        if constrained and not pre.degenerate:
            sol = dual_qp_solve(gradset, tol=qp_tol, max_iter=qp_max_iter, warm_start=lam)
            lam = sol.lam
            step = sol.g_tilde
            qp_iterations = sol.iterations
            post = compatibility(gradset, direction=step, margin=qp_tol)
            post_count = 0 if post.degenerate else post.count
        norm = float(np.linalg.norm(step))
        if unit_norm and norm > 0:
            step = step / norm
        net = net.with_params(net.flatten() - lr * step)

        logits = forward(net, x)
        loss = float(soft_target_loss(logits, targets).mean())
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became {loss}", epoch=epoch)
        correct = np.argmax(logits, axis=1) == y
        new_nfs = int(np.sum(prev_correct & ~correct))
        cumulative += new_nfs
        cos_min, q05, q50, q95, frac_neg = _cos_summary(pre.cosines)
        records.append(
            EpochRecord(
                epoch=epoch,
                accuracy=float(correct.mean()),
                loss=loss,
                new_nfs=new_nfs,
                cumulative_nfs=cumulative,
                incompatible_pre=pre.count,
                incompatible_post=post_count,
                cos_min=cos_min,
                cos_q05=q05,
                cos_q50=q50,
                cos_q95=q95,
                frac_negative=frac_neg,
                step_norm=float(lr * np.linalg.norm(step)),
                loss_increased=loss > prev_loss,
                qp_iterations=qp_iterations,
            )
        )
        if epoch % 500 == 0:
            logger.info(
                "epoch %d: accuracy %.4f, loss %.5f, cumulative NFs %d",
                epoch, correct.mean(), loss, cumulative,
            )
        prev_correct, prev_loss = correct, loss

    return SelfConsistencyTrace(
        n=data.n,
        constrained=constrained,
        unit_norm=unit_norm,
        lr=lr,
        seed=seed,
        records=tuple(records),
    )
