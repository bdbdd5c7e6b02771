"""Tests for model combination: selection, stacking, AMC Distill and ensembles."""

import numpy as np
import pytest

from churn_compass.amc import (
    Candidate,
    ConfidenceDistribution,
    apply_choices,
    default_meta_train_config,
    distill_meta_fit,
    ensemble_average,
    select_at_accuracy_floor,
    select_by_scores,
    select_combined,
    select_conf,
    simulate_calibrated_pair,
    stack_fit,
    stack_predict,
)
from churn_compass.core import accuracy, bundle_from_arrays, hard_predict, softmax
from churn_compass.errors import InvalidInputError, ShapeMismatchError
from churn_compass.metrics import flip_decomposition, negative_flip_mask, relevant_churn
from churn_compass.models import MetaKind, PredictionBundle, ScoreKind, ScoreVector
from churn_compass.trainer.training import OptimizerKind, TrainConfig, TrainMode


def random_bundle(rng, n, k):
    return bundle_from_arrays(
        rng.normal(scale=2.0, size=(n, k)),
        rng.normal(scale=2.0, size=(n, k)),
        rng.integers(0, k, size=n),
    )


def test_selection_never_adds_negative_flips():
    """Fuzz: any score-based selection keeps relevant churn at or below the new model's."""
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        k = int(rng.integers(2, 11))
        bundle = random_bundle(rng, n, k)
        avg_b = ScoreVector(rng.random(n), ScoreKind.AVGCONF)
        avg_n = ScoreVector(rng.random(n), ScoreKind.AVGCONF)
        arbitrary = [(ScoreVector(rng.normal(size=n), ScoreKind.ENERGY), ScoreVector(rng.normal(size=n), ScoreKind.ENERGY))]
        cold = relevant_churn(bundle)

        conf = select_conf(bundle)
        combined = select_combined(bundle, avg_b, avg_n)
        for choices in (conf, combined, select_by_scores(bundle, arbitrary)):
            psi = PredictionBundle(bundle.base, apply_choices(bundle, choices), bundle.labels)
            assert relevant_churn(psi) <= cold

        nf_conf = negative_flip_mask(PredictionBundle(bundle.base, apply_choices(bundle, conf), bundle.labels))
        nf_comb = negative_flip_mask(PredictionBundle(bundle.base, apply_choices(bundle, combined), bundle.labels))
        assert not np.any(nf_comb & ~nf_conf)


def test_conf_ties_keep_base():
    bundle = bundle_from_arrays([[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 3.0]], [0, 1])
    choices = select_conf(bundle)
    assert choices.use_new.tolist() == [False, True]
    assert apply_choices(bundle, choices).data.tolist() == [[1.0, 0.0], [0.0, 3.0]]


def test_select_by_scores_validation():
    bundle = bundle_from_arrays([[1.0, 0.0]], [[0.0, 1.0]], [0])
    with pytest.raises(InvalidInputError):
        select_by_scores(bundle, [])
    short = ScoreVector([0.1, 0.2], ScoreKind.CONF)
    with pytest.raises(ShapeMismatchError):
        select_by_scores(bundle, [(short, short)])


@pytest.mark.parametrize(
    "dist",
    [
        ConfidenceDistribution("point", {"value": 0.9}),
        ConfidenceDistribution("uniform", {"low": 0.55, "high": 0.95}),
        ConfidenceDistribution("mixture", {"values": [0.6, 0.95], "weights": [0.5, 0.5]}),
    ],
)
@pytest.mark.parametrize("correlation", [0.0, 0.5])
def test_conf_selection_on_calibrated_models(dist, correlation):
    """Test Conf selection between calibrated models does not lose accuracy."""
    bundle = simulate_calibrated_pair(100_000, 10, dist, correlation=correlation, seed=1)
    psi = apply_choices(bundle, select_conf(bundle))
    assert accuracy(psi, bundle.labels) >= accuracy(bundle.new, bundle.labels) - 0.005


def test_simulated_models_are_calibrated():
    dist = ConfidenceDistribution("point", {"value": 0.7})
    bundle = simulate_calibrated_pair(50_000, 4, dist, seed=2)
    assert accuracy(bundle.base, bundle.labels) == pytest.approx(0.7, abs=0.01)


def test_confidence_distribution_validation():
    with pytest.raises(InvalidInputError):
        ConfidenceDistribution("uniform", {"low": 0.9, "high": 0.5})
    with pytest.raises(InvalidInputError):
        ConfidenceDistribution("gamma", {})
    with pytest.raises(InvalidInputError):
        ConfidenceDistribution("point", {})


def _informative_bundle(rng, n=150, k=3):
    y = np.arange(n) % k
    onehot = np.eye(k)[y]
    base = 1.0 * onehot + rng.normal(scale=1.0, size=(n, k))
    new = 3.0 * onehot + rng.normal(scale=0.5, size=(n, k))
    return bundle_from_arrays(base, new, y)


def test_stack_fit_learns_the_better_model():
    rng = np.random.default_rng(4)
    val = _informative_bundle(rng)
    test = _informative_bundle(rng)
    meta = stack_fit(val, folds=5, seed=0)
    assert meta.kind is MetaKind.LINEAR_LOGISTIC
    assert meta.input_dim == 6
    assert meta.hyperparameters["lambda"] in (1e-4, 1e-3, 1e-2, 1e-1)
    assert meta.metadata["cv_strategy"] == "stratified"
    out = stack_predict(meta, test)
    assert accuracy(out, test.labels) >= 0.9


def test_stack_fit_binary_and_single_class():
    rng = np.random.default_rng(5)
    val = _informative_bundle(rng, n=80, k=2)
    meta = stack_fit(val, folds=4)
    assert stack_predict(meta, val).shape == (80, 2)
    single = bundle_from_arrays(rng.normal(size=(10, 2)), rng.normal(size=(10, 2)), np.zeros(10, dtype=int))
    with pytest.raises(InvalidInputError):
        stack_fit(single)


def test_binary_stacking_matches_the_penalized_objective():
    """Test the stored W is a stationary point of mean CE + lambda * ||W||^2."""
    rng = np.random.default_rng(13)
    val = _informative_bundle(rng, n=80, k=2)
    lam = 0.1
    meta = stack_fit(val, folds=4, lambda_grid=(lam,))
    w, b = meta.weights[0], meta.biases[0]
    assert np.allclose(w[:, 0], -w[:, 1])
    x = np.hstack([val.base.data, val.new.data])
    p = softmax(x @ w + b).data
    resid = (p - np.eye(2)[val.labels.labels]) / val.n
    assert np.allclose(x.T @ resid + 2.0 * lam * w, 0.0, atol=1e-3)
    assert np.allclose(resid.sum(axis=0), 0.0, atol=1e-3)


def test_distill_meta_fit_single_candidate():
    rng = np.random.default_rng(6)
    val = _informative_bundle(rng, n=120)
    meta = distill_meta_fit(val, alpha_grid=(0.5,), arch=MetaKind.LINEAR_LOGISTIC)
    assert meta.kind is MetaKind.LINEAR_LOGISTIC
    assert meta.hyperparameters["alpha"] == 0.5
    assert len(meta.metadata["candidates"]) == 1
    assert meta.metadata["holdout"] == 24
    out = stack_predict(meta, val)
    assert out.shape == (120, 3)
    with pytest.raises(InvalidInputError):
        distill_meta_fit(val, alpha_grid=(1.5,))
    for bad in (0.0, 1.0):
        with pytest.raises(InvalidInputError):
            distill_meta_fit(val, alpha_grid=(0.5, bad))


def test_distill_meta_fit_depends_on_seed():
    rng = np.random.default_rng(7)
    val = _informative_bundle(rng, n=120)
    fits = [
        distill_meta_fit(val, alpha_grid=(0.5,), arch=MetaKind.LINEAR_LOGISTIC, train_cfg=default_meta_train_config(s))
        for s in (0, 7, 7)
    ]
    assert not np.array_equal(fits[0].weights[0], fits[1].weights[0])
    assert np.array_equal(fits[1].weights[0], fits[2].weights[0])


def test_distill_near_one_copies_the_base():
    """With almost all weight on the base targets the combiner reproduces base predictions."""
    rng = np.random.default_rng(12)
    n, k = 400, 3
    y = rng.integers(0, k, size=n)
    val = bundle_from_arrays(
        rng.normal(scale=2.0, size=(n, k)),
        3.0 * np.eye(k)[y] + rng.normal(scale=0.5, size=(n, k)),
        y,
    )
    cfg = TrainConfig(mode=TrainMode.DISTILL, optimizer=OptimizerKind.GD, lr=0.5, epochs=2000, hidden=())
    meta = distill_meta_fit(
        val, alpha_grid=(0.9999,), arch=MetaKind.LINEAR_LOGISTIC, train_cfg=cfg, accuracy_floor=0.0
    )
    agree = np.mean(hard_predict(stack_predict(meta, val)).labels == hard_predict(val.base).labels)
    assert agree >= 0.99


def test_select_at_accuracy_floor():
    cands = [
        Candidate({"alpha": 0.1}, accuracy=0.90, relevant_churn=0.05),
        Candidate({"alpha": 0.5}, accuracy=0.88, relevant_churn=0.02),
        Candidate({"alpha": 0.9}, accuracy=0.80, relevant_churn=0.01),
    ]
    assert select_at_accuracy_floor(cands, 0.85).key == {"alpha": 0.5}
    assert select_at_accuracy_floor(cands, 0.95).key == {"alpha": 0.1}
    with pytest.raises(InvalidInputError):
        select_at_accuracy_floor([], 0.5)


def test_ensemble_average_is_order_invariant():
    rng = np.random.default_rng(8)
    members = [rng.normal(size=(20, 4)) for _ in range(5)]
    forward = ensemble_average(members)
    backward = ensemble_average(members[::-1])
    assert np.array_equal(forward.data, backward.data)
    assert np.allclose(forward.data, np.mean(members, axis=0))
    assert np.array_equal(ensemble_average([members[0]] * 3).data, members[0])
    with pytest.raises(ShapeMismatchError):
        ensemble_average([members[0], rng.normal(size=(3, 4))])


def test_ensemble_flips_between_identical_sides_are_zero():
    rng = np.random.default_rng(9)
    members = [rng.normal(size=(10, 3)) for _ in range(3)]
    ens = ensemble_average(members)
    report = flip_decomposition(bundle_from_arrays(ens.data, ensemble_average(members[::-1]).data, rng.integers(0, 3, 10)))
    assert report.churn == 0.0


if __name__ == "__main__":
    test_selection_never_adds_negative_flips()
    test_conf_ties_keep_base()
    test_select_by_scores_validation()
    for d in (
        ConfidenceDistribution("point", {"value": 0.9}),
        ConfidenceDistribution("uniform", {"low": 0.55, "high": 0.95}),
        ConfidenceDistribution("mixture", {"values": [0.6, 0.95], "weights": [0.5, 0.5]}),
    ):
        for c in (0.0, 0.5):
            test_conf_selection_on_calibrated_models(d, c)
    test_simulated_models_are_calibrated()
    test_confidence_distribution_validation()
    test_stack_fit_learns_the_better_model()
    test_stack_fit_binary_and_single_class()
    test_distill_meta_fit_single_candidate()
    test_binary_stacking_matches_the_penalized_objective()
    test_distill_meta_fit_depends_on_seed()
    test_distill_near_one_copies_the_base()
    test_select_at_accuracy_floor()
    test_ensemble_average_is_order_invariant()
    test_ensemble_flips_between_identical_sides_are_zero()

    print("✅ All AMC tests passed!")
