"""Tests for churn metrics and flip statistics."""

import numpy as np
import pytest

from churn_compass.core import bundle_from_arrays
from churn_compass.errors import ShapeMismatchError
from churn_compass.metrics import (
    churn,
    conf_irreducible_flips,
    flip_decomposition,
    flip_overlap,
    forgetting_events,
    irreducible_nf_estimate,
    negative_flip_mask,
    positive_flip_mask,
    relevant_churn,
)
from churn_compass.models import CheckpointSeries, ChoiceVector, ScoreKind, ScoreVector


def _one_hot_logits(preds, k=3, scale=5.0):
    z = np.zeros((len(preds), k))
    z[np.arange(len(preds)), preds] = scale
    return z


def make_bundle():
    """No flip, NF, PF, benign flip, no flip."""
    base = _one_hot_logits([0, 0, 1, 1, 2])
    new = _one_hot_logits([0, 1, 0, 2, 2])
    return bundle_from_arrays(base, new, [0, 0, 0, 0, 2])


def test_churn_and_relevant_churn():
    bundle = make_bundle()
    assert churn(bundle) == pytest.approx(0.6)
    assert relevant_churn(bundle) == pytest.approx(0.2)
    assert negative_flip_mask(bundle).tolist() == [False, True, False, False, False]
    assert positive_flip_mask(bundle).tolist() == [False, False, True, False, False]


def test_flip_decomposition_identity():
    """Test churn = (NF + PF + benign) / n."""
    report = flip_decomposition(make_bundle())
    assert report.negative_flips == 1
    assert report.positive_flips == 1
    assert report.benign_flips == 1
    assert report.accuracy_base == pytest.approx(0.4)
    assert report.accuracy_new == pytest.approx(0.6)
    total = report.negative_flips + report.positive_flips + report.benign_flips
    assert report.churn == pytest.approx(total / report.n)


def test_flip_properties_on_random_bundles():
    """Fuzz: relevant churn <= churn <= 1 and the accuracy gap is (PF - NF) / n."""
    rng = np.random.default_rng(11)
    for _ in range(500):
        n = int(rng.integers(1, 101))
        k = int(rng.integers(2, 8))
        bundle = bundle_from_arrays(
            rng.normal(size=(n, k)), rng.normal(size=(n, k)), rng.integers(0, k, size=n)
        )
        report = flip_decomposition(bundle)
        assert 0.0 <= report.relevant_churn <= report.churn <= 1.0
        gap = (report.positive_flips - report.negative_flips) / n
        assert report.accuracy_new - report.accuracy_base == pytest.approx(gap, abs=1e-12)


def test_identical_models_have_no_churn():
    z = _one_hot_logits([0, 1, 2])
    bundle = bundle_from_arrays(z, z, [0, 2, 2])
    report = flip_decomposition(bundle)
    assert report.churn == 0.0
    assert report.relevant_churn == 0.0


def test_flip_overlap():
    bundle = make_bundle()
    revert_all = ChoiceVector.all_base(bundle.n)
    keep_all = ChoiceVector.all_new(bundle.n)
    overlap = flip_overlap(bundle, revert_all, keep_all)
    assert overlap.nf_only_a == 1
    assert overlap.pf_only_a == 1
    assert overlap.nf_both == 0
    assert overlap.nf_only_b == 0
    with pytest.raises(ShapeMismatchError):
        flip_overlap(bundle, ChoiceVector.all_base(2), keep_all)


def test_forgetting_events():
    """Test correct-to-incorrect transitions between consecutive epochs."""
    series = CheckpointSeries((
        _one_hot_logits([0, 1], k=2),
        _one_hot_logits([1, 1], k=2),
        _one_hot_logits([0, 1], k=2),
    ))
    record = forgetting_events(series, [0, 1])
    assert record.counts.tolist() == [1, 0]
    assert record.unforgettable == frozenset({1})
    assert record.to_dict()["total_events"] == 1


def test_conf_irreducible_flips():
    base = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 4.0]])
    new = np.array([[0.0, 5.0, 0.0], [0.0, 0.0, 4.0]])
    flips = conf_irreducible_flips(bundle_from_arrays(base, new, [0, 2]))
    assert flips.count == 1
    assert flips.indices.tolist() == [0]
    assert flips.conf_new[0] > flips.conf_base[0]


def test_irreducible_nf_estimate():
    bundle = make_bundle()
    sb = ScoreVector(np.full(bundle.n, 0.8), ScoreKind.CONF)
    sn = ScoreVector(np.full(bundle.n, 0.5), ScoreKind.CONF)
    assert irreducible_nf_estimate(bundle, sb, sn) == pytest.approx(0.4)


if __name__ == "__main__":
    test_churn_and_relevant_churn()
    test_flip_decomposition_identity()
    test_flip_properties_on_random_bundles()
    test_identical_models_have_no_churn()
    test_flip_overlap()
    test_forgetting_events()
    test_conf_irreducible_flips()
    test_irreducible_nf_estimate()

    print("✅ All metrics tests passed!")
