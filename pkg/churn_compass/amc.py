"""Accumulated model combination: build one output from a base and a new model.

Selection (Conf, AvgConf, Combined or any score set) picks one model's logits
per sample and can never add a negative flip. Stacking and AMC Distill learn a
combiner h([f_b(x); f_n(x)]) on a validation bundle.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from .core import hard_predict, softmax
from .errors import InvalidInputError, ShapeMismatchError
from .metrics import flip_decomposition
from .models import (
    ChoiceVector,
    LabelVector,
    LogitMatrix,
    MetaKind,
    MetaModel,
    PredictionBundle,
    ProbMatrix,
    ScoreVector,
    as_logits,
)
from .scores import conf_score
from .trainer.datasets import Dataset
from .trainer.network import MlpNet
from .trainer.training import NetSpec, OptimizerKind, TrainConfig, TrainMode, train

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
DEFAULT_META_ARCHS = (MetaKind.LINEAR_LOGISTIC, MetaKind.ONE_HIDDEN_NET)
META_HIDDEN_UNITS = 100
# Bias offset for classes never seen while fitting a combiner.
ABSENT_CLASS_BIAS_GAP = 50.0


# ---------------------------------------------------------------------------
# Score-based selection
# ---------------------------------------------------------------------------

def select_by_scores(
    bundle: PredictionBundle, score_pairs: Sequence[tuple[ScoreVector, ScoreVector]]
) -> ChoiceVector:
    """Use the new model only where it scores strictly higher on every score pair.

    Each pair is (base scores, new scores).
    """
    if not score_pairs:
        raise InvalidInputError("select_by_scores needs at least one score pair")
    use_new = np.ones(bundle.n, dtype=bool)
    for i, (base, new) in enumerate(score_pairs):
        if len(base) != bundle.n or len(new) != bundle.n:
            raise ShapeMismatchError(
                f"score pair {i} has lengths {len(base)}/{len(new)} for {bundle.n} samples"
            )
        use_new &= new.values > base.values
    return ChoiceVector(use_new)


def select_conf(bundle: PredictionBundle) -> ChoiceVector:
    return select_by_scores(bundle, [(conf_score(bundle.base), conf_score(bundle.new))])


def select_combined(
    bundle: PredictionBundle, avgconf_base: ScoreVector, avgconf_new: ScoreVector
) -> ChoiceVector:
    """Conf and AvgConf must both favour the new model."""
    return select_by_scores(
        bundle,
        [(conf_score(bundle.base), conf_score(bundle.new)), (avgconf_base, avgconf_new)],
    )


def apply_choices(bundle: PredictionBundle, choices: ChoiceVector) -> LogitMatrix:
    if len(choices) != bundle.n:
        raise ShapeMismatchError(f"{len(choices)} choices for {bundle.n} samples")
    return LogitMatrix(np.where(choices.use_new[:, None], bundle.new.data, bundle.base.data))


# ---------------------------------------------------------------------------
# Learned combiners
# ---------------------------------------------------------------------------

def _stack_features(bundle: PredictionBundle) -> np.ndarray:
    return np.hstack([bundle.base.data, bundle.new.data])


def _meta_forward(model: MetaModel, x: np.ndarray) -> np.ndarray:
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def stack_predict(model: MetaModel, bundle: PredictionBundle) -> LogitMatrix:
    """Meta-logits h([f_b(x); f_n(x)]) for every sample."""
    if model.input_dim != 2 * bundle.k:
        raise ShapeMismatchError(
            f"meta-model expects {model.input_dim} inputs, bundle gives {2 * bundle.k}"
        )
    return LogitMatrix(_meta_forward(model, _stack_features(bundle)))


def _cv_splitter(y: np.ndarray, folds: int, seed: int):
    _, counts = np.unique(y, return_counts=True)
    if counts.min() >= folds:
        return StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed), "stratified"
    logger.warning(
        "smallest class has %d samples for %d folds; using plain k-fold", counts.min(), folds
    )
    return KFold(n_splits=folds, shuffle=True, random_state=seed), "kfold"


def _fit_logistic(x: np.ndarray, y: np.ndarray, lam: float) -> Optional[LogisticRegression]:
    """Mean cross-entropy + lam * ||W||^2 maps onto sklearn's C = 1 / (2 lam n).

    With two classes sklearn fits the single logit difference v, and the
    minimum-norm W = (-v/2, v/2) has ||W||^2 = ||v||^2 / 2, so C doubles.
    """
    present = np.unique(y).size
    if present < 2:
        return None
    scale = 1.0 if present == 2 else 2.0
    clf = LogisticRegression(C=1.0 / (scale * lam * x.shape[0]), max_iter=5000)
    clf.fit(x, y)
    return clf


def _logistic_to_meta(clf: LogisticRegression, k: int, hyper: dict, meta: dict) -> MetaModel:
    classes = clf.classes_.astype(np.int64)
    w = np.zeros((2 * k, k))
    b = np.zeros(k)
    if classes.size == 2:
        # sklearn keeps one score column for two classes: logit of classes[1] vs classes[0].
        w[:, classes[1]] = clf.coef_[0] / 2.0
        w[:, classes[0]] = -clf.coef_[0] / 2.0
        b[classes[1]] = clf.intercept_[0] / 2.0
        b[classes[0]] = -clf.intercept_[0] / 2.0
    else:
        for row, c in enumerate(classes):
            w[:, c] = clf.coef_[row]
            b[c] = clf.intercept_[row]
    absent = np.setdiff1d(np.arange(k), classes)
    if absent.size:
        b[absent] = b[classes].min() - ABSENT_CLASS_BIAS_GAP
    return MetaModel(MetaKind.LINEAR_LOGISTIC, (w,), (b,), hyperparameters=hyper, metadata=meta)


def stack_fit(
    bundle_val: PredictionBundle,
    folds: int = 5,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    seed: int = 0,
) -> MetaModel:
    """Multinomial logistic regression on [f_b(x); f_n(x)] with lambda picked by k-fold CV.

    Ties in mean fold accuracy go to the larger lambda; the final model is
    refit on the whole validation bundle.
    """
    y = bundle_val.labels.labels
    if np.unique(y).size < 2:
        raise InvalidInputError("stacking needs at least two classes in the validation labels")
    if folds < 2 or folds > bundle_val.n:
        raise InvalidInputError(f"folds must be in [2, {bundle_val.n}], got {folds}")
    grid = sorted(float(v) for v in lambda_grid)
    if not grid or grid[0] <= 0:
        raise InvalidInputError(f"lambda grid must be non-empty and positive, got {list(lambda_grid)}")

    x = _stack_features(bundle_val)
    splitter, strategy = _cv_splitter(y, folds, seed)
    splits = list(splitter.split(x, y))
    cv_table = {}
    best_lam, best_acc = grid[0], -1.0
    for lam in grid:
        fold_acc = []
        for train_idx, test_idx in splits:
            clf = _fit_logistic(x[train_idx], y[train_idx], lam)
            if clf is None:
                pred = np.full(test_idx.shape[0], y[train_idx][0])
            else:
                pred = clf.predict(x[test_idx])
            fold_acc.append(float(np.mean(pred == y[test_idx])))
        mean_acc = float(np.mean(fold_acc))
        cv_table[lam] = mean_acc
        logger.debug("stacking lambda=%g: mean fold accuracy %.4f", lam, mean_acc)
        if mean_acc >= best_acc:
            best_lam, best_acc = lam, mean_acc

    logger.info("stacking: chose lambda=%g (cv accuracy %.4f)", best_lam, best_acc)
    clf = _fit_logistic(x, y, best_lam)
    assert clf is not None
    return _logistic_to_meta(
        clf,
        bundle_val.k,
        hyper={"lambda": best_lam},
        meta={
            "folds": folds,
            "seed": seed,
            "cv_strategy": strategy,
            "cv_accuracy": {f"{lam:g}": acc for lam, acc in cv_table.items()},
        },
    )


@dataclass(frozen=True)
class Candidate:
    """One fitted configuration scored on a holdout set."""
    key: dict
    accuracy: float
    relevant_churn: float

    def to_dict(self) -> dict:
        return {**self.key, "accuracy": self.accuracy, "relevant_churn": self.relevant_churn}


def select_at_accuracy_floor(candidates: Sequence[Candidate], floor: float) -> Candidate:
    """Lowest relevant churn among candidates with accuracy >= floor.

    Ties go to the higher accuracy, then to the earlier candidate. When no
    candidate reaches the floor the most accurate one is returned.
    """
    if not candidates:
        raise InvalidInputError("no candidates to select from")
    eligible = [c for c in candidates if c.accuracy >= floor]
    if not eligible:
        logger.warning("no candidate reaches accuracy %.4f; taking the most accurate", floor)
        return max(candidates, key=lambda c: c.accuracy)
    return min(eligible, key=lambda c: (c.relevant_churn, -c.accuracy))


def _holdout_split(y: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(y.shape[0])
    _, counts = np.unique(y, return_counts=True)
    n_hold = max(int(round(fraction * y.shape[0])), 1)
    stratify = y if counts.min() >= 2 and n_hold >= counts.size else None
    fit_idx, hold_idx = train_test_split(idx, test_size=n_hold, random_state=seed, stratify=stratify)
    return np.sort(fit_idx), np.sort(hold_idx)


def _fold_standardization(net: MlpNet, mean: np.ndarray, std: np.ndarray) -> MlpNet:
    """Absorb (x - mean) / std into the first layer."""
    w0 = net.weights[0] / std[:, None]
    b0 = net.biases[0] - (mean / std) @ net.weights[0]
    return MlpNet((w0,) + net.weights[1:], (b0,) + net.biases[1:])


def default_meta_train_config(seed: int = 0) -> TrainConfig:
    """Adam at 0.001, batch 32, early stopping with patience 5."""
    return TrainConfig(
        mode=TrainMode.DISTILL,
        optimizer=OptimizerKind.ADAM,
        lr=0.001,
        batch_size=32,
        epochs=200,
        patience=5,
        seed=seed,
        hidden=(),
    )


def distill_meta_fit(
    bundle_val: PredictionBundle,
    base_probs: Optional[ProbMatrix] = None,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    arch: Union[MetaKind, Sequence[MetaKind]] = DEFAULT_META_ARCHS,
    train_cfg: Optional[TrainConfig] = None,
    accuracy_floor: Optional[float] = None,
    accuracy_tolerance: float = 0.0,
    holdout_fraction: float = 0.2,
) -> MetaModel:
    """Fit h on the validation bundle with (1 - a) CE(h, y) + a CE(h, softmax(f_b)).

    Every (alpha, architecture) pair is trained on 80% of the validation
    bundle with early stopping on the remaining stratified 20%; the pair with
    the lowest relevant churn whose holdout accuracy reaches the floor wins.
    The floor defaults to the new model's holdout accuracy minus
    `accuracy_tolerance`.
    """
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        raise InvalidInputError("alpha grid is empty")
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {a}")
    archs = (arch,) if isinstance(arch, MetaKind) else tuple(arch)
    if not archs:
        raise InvalidInputError("no meta-model architecture given")
    if base_probs is None:
        base_probs = softmax(bundle_val.base)
    if base_probs.data.shape != bundle_val.base.shape:
        raise ShapeMismatchError(f"base probabilities {base_probs.data.shape} vs {bundle_val.base.shape}")
    cfg_template = train_cfg or default_meta_train_config()

    k = bundle_val.k
    y = bundle_val.labels.labels
    fit_idx, hold_idx = _holdout_split(y, holdout_fraction, cfg_template.seed)
    x = _stack_features(bundle_val)
    mean = x[fit_idx].mean(axis=0)
    std = x[fit_idx].std(axis=0)
    std[std == 0] = 1.0
    z = (x - mean) / std
    fit_data = Dataset(z[fit_idx], LabelVector(y[fit_idx]), k)
    hold_data = Dataset(z[hold_idx], LabelVector(y[hold_idx]), k)
    # log p is a logit vector whose softmax is p again.
    target_logits = LogitMatrix(np.log(np.maximum(base_probs.data[fit_idx], 1e-300)))
    hold_bundle = bundle_val.subset(hold_idx)

    if accuracy_floor is None:
        new_acc = float(np.mean(hard_predict(hold_bundle.new).labels == hold_bundle.labels.labels))
        accuracy_floor = new_acc - accuracy_tolerance

    candidates: list[Candidate] = []
    nets: list[MlpNet] = []
    for kind in archs:
        hidden = () if kind is MetaKind.LINEAR_LOGISTIC else (META_HIDDEN_UNITS,)
        spec = NetSpec(input_dim=2 * k, output_dim=k, hidden=hidden)
        for alpha in alphas:
            cfg = cfg_template.with_overrides(mode=TrainMode.DISTILL, alpha=alpha, hidden=hidden)
            result = train(fit_data, spec, cfg, base_logits=target_logits, monitor=hold_data)
            net = _fold_standardization(result.net, mean, std)
            meta = MetaModel(kind, net.weights, net.biases)
            report = flip_decomposition(
                PredictionBundle(hold_bundle.base, stack_predict(meta, hold_bundle), hold_bundle.labels)
            )
            candidates.append(
                Candidate(
                    key={"alpha": alpha, "arch": kind.value},
                    accuracy=report.accuracy_new,
                    relevant_churn=report.relevant_churn,
                )
            )
            nets.append(net)
            logger.debug(
                "distill candidate %s alpha=%.2f: accuracy %.4f, relevant churn %.4f",
                kind.value, alpha, report.accuracy_new, report.relevant_churn,
            )

    chosen = select_at_accuracy_floor(candidates, accuracy_floor)
    pos = candidates.index(chosen)
    kind = MetaKind(chosen.key["arch"])
    logger.info(
        "AMC Distill: chose %s alpha=%.2f (holdout accuracy %.4f, relevant churn %.4f)",
        kind.value, chosen.key["alpha"], chosen.accuracy, chosen.relevant_churn,
    )
    return MetaModel(
        kind,
        nets[pos].weights,
        nets[pos].biases,
        hyperparameters={"alpha": chosen.key["alpha"], "arch": kind.value},
        metadata={
            "accuracy_floor": accuracy_floor,
            "holdout": int(hold_idx.shape[0]),
            "seed": cfg_template.seed,
            "candidates": [c.to_dict() for c in candidates],
        },
    )


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

def ensemble_average(members: Sequence[Union[LogitMatrix, np.ndarray]]) -> LogitMatrix:
    """Element-wise mean of member logits.

    Values are sorted across members before summing, so the result does not
    depend on member order.
    """
    if not members:
        raise InvalidInputError("ensemble needs at least one member")
    mats = [as_logits(m) for m in members]
    shape = mats[0].shape
    for i, m in enumerate(mats[1:], start=2):
        if m.shape != shape:
            raise ShapeMismatchError(f"member {i} has shape {m.shape}, member 1 has {shape}")
    stack = np.stack([m.data for m in mats])
    if np.all(stack == stack[0]):
        return LogitMatrix(stack[0])
    return LogitMatrix(np.sort(stack, axis=0).mean(axis=0))


# ---------------------------------------------------------------------------
# Calibrated simulation
# ---------------------------------------------------------------------------

_DIST_KINDS = ("point", "uniform", "mixture", "beta")


@dataclass(frozen=True)
class ConfidenceDistribution:
    """Distribution of a model's top-class confidence on [1/k, 1].

    point: ``value``; uniform: ``low``, ``high``; mixture: ``values`` with
    ``weights``; beta: ``a``, ``b`` rescaled from (0, 1) onto (1/k, 1).
    """
    kind: str = "point"
    params: dict = field(default_factory=lambda: {"value": 0.9})

    def __post_init__(self):
        if self.kind not in _DIST_KINDS:
            raise InvalidInputError(f"unknown confidence distribution '{self.kind}'")
        p = self.params
        try:
            if self.kind == "point":
                _unit(p["value"])
            elif self.kind == "uniform":
                if not 0.0 <= p["low"] <= p["high"] <= 1.0:
                    raise InvalidInputError(f"uniform needs 0 <= low <= high <= 1, got {p}")
            elif self.kind == "mixture":
                values, weights = np.asarray(p["values"], float), np.asarray(p["weights"], float)
                if values.shape != weights.shape or values.size == 0:
                    raise InvalidInputError("mixture needs matching, non-empty values and weights")
                if np.any(weights < 0) or weights.sum() <= 0:
                    raise InvalidInputError("mixture weights must be non-negative with positive sum")
                for v in values:
                    _unit(v)
            elif p["a"] <= 0 or p["b"] <= 0:
                raise InvalidInputError("beta needs a > 0 and b > 0")
        except KeyError as e:
            raise InvalidInputError(f"{self.kind} distribution is missing parameter {e}")

    def sample(self, rng: np.random.Generator, n: int, k: int) -> np.ndarray:
        p = self.params
        floor = 1.0 / k
        if self.kind == "point":
            out = np.full(n, float(p["value"]))
        elif self.kind == "uniform":
            out = rng.uniform(p["low"], p["high"], size=n)
        elif self.kind == "mixture":
            weights = np.asarray(p["weights"], float)
            pick = rng.choice(len(weights), size=n, p=weights / weights.sum())
            out = np.asarray(p["values"], float)[pick]
        else:
            out = floor + (1.0 - floor) * rng.beta(p["a"], p["b"], size=n)
        if out.size and out.min() < floor - 1e-12:
            raise InvalidInputError(f"confidence {out.min():.4f} is below 1/k = {floor:.4f}")
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _unit(v: float) -> None:
    if not 0.0 <= float(v) <= 1.0:
        raise InvalidInputError(f"confidence {v} is outside [0, 1]")


def _calibrated_logits(pred: np.ndarray, conf: np.ndarray, k: int) -> np.ndarray:
    rest = np.log(np.maximum((1.0 - conf) / (k - 1), 1e-300))
    logits = np.repeat(rest[:, None], k, axis=1)
    # Small lift keeps the predicted class the argmax when conf == 1/k.
    logits[np.arange(pred.shape[0]), pred] = np.log(conf) + 1e-6
    return logits


def simulate_calibrated_pair(
    n: int,
    k: int,
    base_dist: ConfidenceDistribution,
    new_dist: Optional[ConfidenceDistribution] = None,
    correlation: float = 0.0,
    seed: int = 0,
) -> PredictionBundle:
    """Two perfectly calibrated models over one label vector.

    Each model is right with probability equal to its reported confidence.
    `correlation` is the probability that both models share the uniform draw
    that decides correctness, which couples their errors.
    """
    if n < 1 or k < 2:
        raise InvalidInputError(f"need n >= 1 and k >= 2, got n={n}, k={k}")
    if not 0.0 <= correlation <= 1.0:
        raise InvalidInputError(f"correlation must lie in [0, 1], got {correlation}")
    new_dist = new_dist or base_dist
    rng = np.random.default_rng(seed)

    y = rng.integers(0, k, size=n)
    conf_b = base_dist.sample(rng, n, k)
    conf_n = new_dist.sample(rng, n, k)
    u_b = rng.random(n)
    shared = rng.random(n) < correlation
    u_n = np.where(shared, u_b, rng.random(n))

    def predictions(correct: np.ndarray) -> np.ndarray:
        wrong = (y + 1 + rng.integers(0, k - 1, size=n)) % k
        return np.where(correct, y, wrong)

    pred_b = predictions(u_b < conf_b)
    pred_n = predictions(u_n < conf_n)
    return PredictionBundle(
        base=LogitMatrix(_calibrated_logits(pred_b, conf_b, k)),
        new=LogitMatrix(_calibrated_logits(pred_n, conf_n, k)),
        labels=LabelVector(y),
    )
