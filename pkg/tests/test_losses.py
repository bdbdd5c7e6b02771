"""Tests for distillation and focal objectives."""

import numpy as np
import pytest

from churn_compass.errors import InvalidInputError
from churn_compass.trainer.losses import (
    cross_entropy,
    distill_targets,
    focal_targets,
    loss_distill,
    loss_focal,
    one_hot,
    soft_target_grad,
    soft_target_loss,
)

PROBS = np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
BASE = np.array([[0.5, 0.4, 0.1], [0.2, 0.7, 0.1]])
LABELS = [0, 2]


def test_distill_is_a_mixture_of_cross_entropies():
    for alpha in (0.0, 0.3, 1.0):
        expected = (1 - alpha) * cross_entropy(PROBS, one_hot(LABELS, 3)) + alpha * cross_entropy(PROBS, BASE)
        assert loss_distill(PROBS, LABELS, BASE, alpha) == pytest.approx(expected)


def test_distill_alpha_zero_is_plain_cross_entropy():
    assert np.array_equal(distill_targets(LABELS, BASE, 0.0), one_hot(LABELS, 3))


def test_focal_targets():
    """Test base-correct samples distill from the base and wrong ones get epsilon * e_y."""
    targets = focal_targets(LABELS, BASE, [True, False], alpha=0.5, epsilon=2.0)
    assert targets[0].tolist() == pytest.approx([0.75, 0.2, 0.05])
    assert targets[1].tolist() == pytest.approx([0.0, 0.0, 1.5])
    expected = np.mean([
        -np.sum(targets[0] * np.log(PROBS[0])),
        -np.sum(targets[1] * np.log(PROBS[1])),
    ])
    assert loss_focal(PROBS, LABELS, BASE, [True, False], 0.5, 2.0) == pytest.approx(expected)


def test_invalid_alpha_and_epsilon():
    with pytest.raises(InvalidInputError):
        distill_targets(LABELS, BASE, 1.5)
    with pytest.raises(InvalidInputError):
        focal_targets(LABELS, BASE, [True, True], 0.5, epsilon=0.0)


def test_zero_targets_ignore_zero_probabilities():
    probs = np.array([[1.0, 0.0]])
    assert cross_entropy(probs, np.array([[1.0, 0.0]])) == 0.0


def test_soft_target_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(4, 3))
    t = focal_targets([0, 1, 2, 0], BASE[[0, 1, 0, 1]], [True, False, True, False], 0.4, 1.7)
    grad = soft_target_grad(z, t)
    h = 1e-6
    for i in range(4):
        for c in range(3):
            up, down = z.copy(), z.copy()
            up[i, c] += h
            down[i, c] -= h
            fd = (soft_target_loss(up, t)[i] - soft_target_loss(down, t)[i]) / (2 * h)
            assert grad[i, c] == pytest.approx(fd, abs=1e-6)


if __name__ == "__main__":
    test_distill_is_a_mixture_of_cross_entropies()
    test_distill_alpha_zero_is_plain_cross_entropy()
    test_focal_targets()
    test_invalid_alpha_and_epsilon()
    test_zero_targets_ignore_zero_probabilities()
    test_soft_target_grad_matches_finite_differences()

    print("✅ All loss tests passed!")
