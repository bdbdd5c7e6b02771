"""Tests for temperature scaling and reliability tables."""

import numpy as np
import pytest

from churn_compass.calibration import (
    apply_temperature,
    calibration_study,
    ranking_change_analysis,
    reliability,
    temperature_fit,
)
from churn_compass.core import bundle_from_arrays, hard_predict, softmax
from churn_compass.errors import InvalidInputError
from churn_compass.models import LogitMatrix, ProbMatrix


def sample_labels(rng, logits, temperature):
    """Draw labels from softmax(z / T)."""
    p = softmax(logits / temperature).data
    u = rng.random(p.shape[0])[:, None]
    return np.argmax(u < np.cumsum(p, axis=1), axis=1)


@pytest.mark.parametrize("t_true", [0.5, 1.0, 2.0, 4.0])
def test_temperature_recovery(t_true):
    rng = np.random.default_rng(int(t_true * 10))
    z = rng.normal(scale=3.0, size=(50_000, 5))
    y = sample_labels(rng, z, t_true)
    fit = temperature_fit(z, y)
    assert fit.temperature == pytest.approx(t_true, rel=0.05)
    assert fit.nll_after <= fit.nll_before
    assert fit.at_bound is None

    scaled = apply_temperature(z, fit.temperature)
    assert np.array_equal(hard_predict(scaled).labels, hard_predict(z).labels)
    before = reliability(LogitMatrix(z), y)
    after = reliability(scaled, y)
    assert after.ece <= before.ece + 1e-3


def test_constant_logits_are_rejected():
    with pytest.raises(InvalidInputError):
        temperature_fit(np.zeros((4, 3)), [0, 1, 2, 0])


def test_huge_margin_clamps_at_lower_bound():
    """One-hot logits with a wide margin drive the NLL to exactly 0 at small T."""
    y = np.arange(100) % 2
    fit = temperature_fit(50.0 * np.eye(2)[y], y)
    assert fit.at_bound == "lower"
    assert fit.temperature == pytest.approx(0.05)
    assert fit.nll_after == pytest.approx(0.0)


def test_large_temperature_approaches_uniform():
    rng = np.random.default_rng(9)
    z = rng.normal(scale=5.0, size=(20, 4))
    p = softmax(apply_temperature(z, 1e6)).data
    assert np.allclose(p, 0.25, atol=1e-5)


def test_apply_temperature_validation():
    with pytest.raises(InvalidInputError):
        apply_temperature(np.zeros((1, 2)), 0.0)


def test_reliability_hand_computed():
    probs = ProbMatrix([[0.95, 0.05], [0.95, 0.05]])
    table = reliability(probs, [0, 1])
    assert len(table.bins) == 15
    assert table.ece == pytest.approx(0.45)
    assert table.mce == pytest.approx(0.45)
    assert table.n == 2


def test_reliability_accepts_plain_arrays():
    table = reliability(np.array([[0.95, 0.05], [0.95, 0.05]]), np.array([0, 1]))
    assert table.ece == pytest.approx(0.45)
    with pytest.raises(InvalidInputError):
        reliability(np.array([[0.9, 0.9]]), [0])


def test_single_bin_ece_is_confidence_gap():
    rng = np.random.default_rng(4)
    probs = softmax(rng.normal(scale=2.0, size=(300, 5)))
    y = rng.integers(0, 5, size=300)
    table = reliability(probs, y, n_bins=1)
    conf = probs.data.max(axis=1).mean()
    acc = np.mean(np.argmax(probs.data, axis=1) == y)
    assert table.ece == pytest.approx(abs(conf - acc))
    assert table.mce == pytest.approx(table.ece)


def test_reliability_upper_edge_is_inclusive():
    """Test bins are (lower, upper]: confidence 0.5 falls in the first of two bins."""
    table = reliability(ProbMatrix([[0.5, 0.5]]), [0], n_bins=2)
    assert table.bins[0].count == 1
    assert table.bins[1].count == 0


def test_ranking_change_bad_switch():
    bundle = bundle_from_arrays([[2.0, 0.0]], [[0.0, 1.5]], [0])
    report = ranking_change_analysis(bundle, t_base=4.0, t_new=1.0)
    assert report.switch_to_new.bad == 1
    assert report.switch_to_base.total == 0
    unchanged = ranking_change_analysis(bundle, 1.0, 1.0)
    assert unchanged.total == 0


def test_calibration_study_report():
    rng = np.random.default_rng(3)

    def overconfident(n):
        y = rng.integers(0, 4, size=n)
        base = 4.0 * rng.normal(size=(n, 4)) + 3.0 * np.eye(4)[y]
        new = 6.0 * rng.normal(size=(n, 4)) + 6.0 * np.eye(4)[y]
        return bundle_from_arrays(base, new, y)

    study = calibration_study(overconfident(2000), overconfident(2000), n_bins=10)
    d = study.to_dict()
    assert d["temperature_base"]["temperature"] > 1.0
    assert d["temperature_new"]["temperature"] > 1.0
    assert set(d["conf_selection_after"]) == {"accuracy", "relevant_churn", "negative_flips", "use_new"}
    assert len(d["reliability_before"]["base"]["bins"]) == 10


if __name__ == "__main__":
    for t in (0.5, 1.0, 2.0, 4.0):
        test_temperature_recovery(t)
    test_constant_logits_are_rejected()
    test_huge_margin_clamps_at_lower_bound()
    test_large_temperature_approaches_uniform()
    test_apply_temperature_validation()
    test_reliability_hand_computed()
    test_reliability_accepts_plain_arrays()
    test_single_bin_ece_is_confidence_gap()
    test_reliability_upper_edge_is_inclusive()
    test_ranking_change_bad_switch()
    test_calibration_study_report()

    print("✅ All calibration tests passed!")
