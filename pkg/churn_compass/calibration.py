"""Temperature scaling, reliability tables and their effect on Conf selection."""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import log_softmax

from .amc import apply_choices, select_conf
from .core import hard_predict, softmax
from .errors import InvalidInputError, ShapeMismatchError
from .metrics import conf_irreducible_flips, flip_decomposition
from .models import (
    LabelVector,
    LogitMatrix,
    PredictionBundle,
    ProbMatrix,
    RankingChangeReport,
    ReliabilityBin,
    ReliabilityTable,
    SwitchCounts,
    as_labels,
    as_logits,
    as_probs,
)

logger = logging.getLogger(__name__)

T_MIN = 0.05
T_MAX = 20.0
T_TOL = 1e-4
GRID_POINTS = 400
DEFAULT_BINS = 15

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll_before: float
    nll_after: float
    method: str = "golden"
    at_bound: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "nll_before": self.nll_before,
            "nll_after": self.nll_after,
            "method": self.method,
            "at_bound": self.at_bound,
        }


def _nll(z: np.ndarray, y: np.ndarray, t: float) -> float:
    logp = log_softmax(z / t, axis=1)
    return float(-logp[np.arange(y.shape[0]), y].mean())


def _golden(f, lo: float, hi: float, tol: float) -> Optional[float]:
    """Minimizer of f on [lo, hi], or None once f is seen to be non-unimodal."""
    a, b = lo, hi
    fa, fb = f(a), f(b)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        # A unimodal f never rises above both of its neighbours in the bracket.
        if fc > max(fa, fd) or fd > max(fc, fb):
            return None
        # Ties shrink towards the smaller T; an underflowed NLL is flat at 0 there.
        if fc <= fd:
            b, fb = d, fd
            d, fd = c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, fa = c, fc
            c, fc = d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    # Endpoints are candidates too; this is what lets the fit clamp at a bound.
    best = min(((fa, a), (fc, c), (fd, d), (fb, b)))
    return best[1]


def temperature_fit(
    logits_val: Union[LogitMatrix, np.ndarray],
    labels_val: Union[LabelVector, np.ndarray],
    t_min: float = T_MIN,
    t_max: float = T_MAX,
    tol: float = T_TOL,
) -> TemperatureFit:
    """Temperature T minimizing the mean NLL of softmax(z / T).

    Golden-section search on [t_min, t_max]; a 400-point log grid is used
    instead if the search sees an interior value above both bracket ends.

    Raises:
        InvalidInputError: every row of logits is constant.
    """
    z = as_logits(logits_val).data
    y = as_labels(labels_val, k=z.shape[1]).labels
    if y.shape[0] != z.shape[0]:
        raise ShapeMismatchError(f"{y.shape[0]} labels for {z.shape[0]} rows")
    if np.all(z.max(axis=1) == z.min(axis=1)):
        raise InvalidInputError("every logit row is constant; temperature is undetermined")

    def f(t: float) -> float:
        return _nll(z, y, t)

    t_best = _golden(f, t_min, t_max, tol)
    method = "golden"
    if t_best is None:
        logger.warning("temperature NLL is not unimodal on [%g, %g]; using grid search", t_min, t_max)
        grid = np.geomspace(t_min, t_max, GRID_POINTS)
        t_best = float(grid[int(np.argmin([f(t) for t in grid]))])
        method = "grid"
    if f(t_min) <= f(t_best):
        t_best = t_min

    at_bound = None
    if t_best - t_min <= tol:
        at_bound = "lower"
    elif t_max - t_best <= tol:
        at_bound = "upper"
    if at_bound:
        logger.warning("fitted temperature %.4g sits at the %s bound", t_best, at_bound)
    fit = TemperatureFit(
        temperature=float(t_best),
        nll_before=f(1.0),
        nll_after=f(t_best),
        method=method,
        at_bound=at_bound,
    )
    logger.info("temperature fit: T=%.4f (nll %.5f -> %.5f)", fit.temperature, fit.nll_before, fit.nll_after)
    return fit


def apply_temperature(logits: Union[LogitMatrix, np.ndarray], temperature: float) -> LogitMatrix:
    if not (np.isfinite(temperature) and temperature > 0):
        raise InvalidInputError(f"temperature must be positive and finite, got {temperature}")
    return LogitMatrix(as_logits(logits).data / temperature)


def reliability(
    probs: Union[ProbMatrix, LogitMatrix, np.ndarray],
    labels: Union[LabelVector, np.ndarray],
    n_bins: int = DEFAULT_BINS,
) -> ReliabilityTable:
    """Equal-width bins (lower, upper] over top-class confidence, with ECE and MCE.

    A LogitMatrix is accepted and passed through softmax first; a plain
    array must already hold probabilities.
    """
    if n_bins < 1:
        raise InvalidInputError(f"n_bins must be at least 1, got {n_bins}")
    p = softmax(probs).data if isinstance(probs, LogitMatrix) else as_probs(probs).data
    y = as_labels(labels, k=p.shape[1]).labels
    if y.shape[0] != p.shape[0]:
        raise ShapeMismatchError(f"{y.shape[0]} labels for {p.shape[0]} rows")
    conf = p.max(axis=1)
    correct = np.argmax(p, axis=1) == y
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)

    n = conf.shape[0]
    bins = []
    ece, mce = 0.0, 0.0
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        mean_conf = float(conf[mask].mean()) if count else 0.0
        acc = float(correct[mask].mean()) if count else 0.0
        if count:
            gap = abs(acc - mean_conf)
            ece += count / n * gap
            mce = max(mce, gap)
        bins.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), count, mean_conf, acc))
    return ReliabilityTable(bins=tuple(bins), ece=ece, mce=mce)


def ranking_change_analysis(
    bundle: PredictionBundle, t_base: float, t_new: float
) -> RankingChangeReport:
    """Classify samples whose Conf-selected model changes when both models are temperature scaled.

    good: the newly chosen model is right and the old choice was wrong; bad:
    the reverse; benign: anything else.
    """
    scaled = PredictionBundle(
        apply_temperature(bundle.base, t_base), apply_temperature(bundle.new, t_new), bundle.labels
    )
    before = select_conf(bundle).use_new
    after = select_conf(scaled).use_new
    y = bundle.labels.labels
    base_ok = hard_predict(bundle.base).labels == y
    new_ok = hard_predict(bundle.new).labels == y

    counts = {True: [0, 0, 0], False: [0, 0, 0]}
    for i in np.flatnonzero(before != after):
        old_ok = new_ok[i] if before[i] else base_ok[i]
        now_ok = new_ok[i] if after[i] else base_ok[i]
        slot = 1 if (now_ok and not old_ok) else 2 if (old_ok and not now_ok) else 0
        counts[bool(after[i])][slot] += 1
    return RankingChangeReport(
        switch_to_base=SwitchCounts(*counts[False]),
        switch_to_new=SwitchCounts(*counts[True]),
    )


@dataclass(frozen=True)
class CalibrationStudy:
    """Per-model temperatures from validation data and their effect on a test bundle."""
    fit_base: TemperatureFit
    fit_new: TemperatureFit
    reliability_before: dict
    reliability_after: dict
    conf_selection_before: dict
    conf_selection_after: dict
    ranking_changes: RankingChangeReport
    conf_irreducible_before: int
    conf_irreducible_after: int

    def to_dict(self) -> dict:
        return {
            "temperature_base": self.fit_base.to_dict(),
            "temperature_new": self.fit_new.to_dict(),
            "reliability_before": self.reliability_before,
            "reliability_after": self.reliability_after,
            "conf_selection_before": self.conf_selection_before,
            "conf_selection_after": self.conf_selection_after,
            "ranking_changes": self.ranking_changes.to_dict(),
            "conf_irreducible_before": self.conf_irreducible_before,
            "conf_irreducible_after": self.conf_irreducible_after,
        }


def _conf_selection_summary(bundle: PredictionBundle) -> dict:
    choices = select_conf(bundle)
    combined = PredictionBundle(bundle.base, apply_choices(bundle, choices), bundle.labels)
    report = flip_decomposition(combined)
    return {
        "accuracy": report.accuracy_new,
        "relevant_churn": report.relevant_churn,
        "negative_flips": report.negative_flips,
        "use_new": choices.count_new,
    }


def calibration_study(
    bundle_val: PredictionBundle, bundle_test: PredictionBundle, n_bins: int = DEFAULT_BINS
) -> CalibrationStudy:
    """Fit one temperature per model on validation data and report the test-set effect."""
    fit_b = temperature_fit(bundle_val.base, bundle_val.labels)
    fit_n = temperature_fit(bundle_val.new, bundle_val.labels)
    scaled = PredictionBundle(
        apply_temperature(bundle_test.base, fit_b.temperature),
        apply_temperature(bundle_test.new, fit_n.temperature),
        bundle_test.labels,
    )

    def tables(b: PredictionBundle) -> dict:
        return {
            "base": reliability(b.base, b.labels, n_bins).to_dict(),
            "new": reliability(b.new, b.labels, n_bins).to_dict(),
        }

    return CalibrationStudy(
        fit_base=fit_b,
        fit_new=fit_n,
        reliability_before=tables(bundle_test),
        reliability_after=tables(scaled),
        conf_selection_before=_conf_selection_summary(bundle_test),
        conf_selection_after=_conf_selection_summary(scaled),
        ranking_changes=ranking_change_analysis(bundle_test, fit_b.temperature, fit_n.temperature),
        conf_irreducible_before=conf_irreducible_flips(bundle_test).count,
        conf_irreducible_after=conf_irreducible_flips(scaled).count,
    )
