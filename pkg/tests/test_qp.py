"""Tests for gradient compatibility and the dual QP projection."""

from itertools import combinations

import numpy as np
import pytest

from churn_compass.errors import ConvergenceError, ShapeMismatchError
from churn_compass.trainer.network import GradientSet
from churn_compass.trainer.qp import compatibility, dual_qp_solve


def brute_force_projection(rows: np.ndarray, g: np.ndarray) -> float:
    """Smallest 1/2 ||x - g||^2 over feasible points of every active set."""
    n = rows.shape[0]
    best = np.inf
    for size in range(n + 1):
        for active in combinations(range(n), size):
            if active:
                ga = rows[list(active)]
                mu, *_ = np.linalg.lstsq(ga @ ga.T, -(ga @ g), rcond=None)
                x = g + ga.T @ mu
            else:
                x = g
            scale = np.linalg.norm(x) * np.linalg.norm(rows, axis=1)
            if np.all(rows @ x >= -1e-9 * np.maximum(scale, 1.0)):
                best = min(best, 0.5 * float(np.sum((x - g) ** 2)))
    return best


def test_two_sample_case():
    """Test g_1 = (1, 0), g_2 = (-2, 0.1) projects onto the x_1 = 0 face."""
    gs = GradientSet.from_rows(np.array([[1.0, 0.0], [-2.0, 0.1]]))
    sol = dual_qp_solve(gs)
    assert sol.g_tilde == pytest.approx([0.0, 0.05], abs=1e-6)
    assert sol.objective == pytest.approx(0.125, abs=1e-6)
    assert sol.objective == pytest.approx(brute_force_projection(gs.per_sample, gs.mean), abs=1e-6)


def test_random_instances_match_active_set_oracle():
    rng = np.random.default_rng(42)
    for _ in range(500):
        n = int(rng.integers(1, 9))
        p = int(rng.integers(n + 1, 11))
        gs = GradientSet.from_rows(rng.normal(size=(n, p)))
        sol = dual_qp_solve(gs)
        assert np.all(sol.lam >= 0)
        assert np.array_equal(sol.g_tilde, gs.mean + gs.per_sample.T @ sol.lam)
        assert sol.objective == pytest.approx(brute_force_projection(gs.per_sample, gs.mean), abs=1e-4)
        cos = compatibility(gs, direction=sol.g_tilde)
        if not cos.degenerate:
            assert cos.cosines.min() >= -1e-4
        assert sol.residuals["primal"] <= 1e-4


def test_compatible_batch_is_left_alone():
    gs = GradientSet.from_rows(np.array([[1.0, 0.2], [0.8, -0.1]]))
    sol = dual_qp_solve(gs)
    assert sol.iterations == 0
    assert np.array_equal(sol.g_tilde, gs.mean)


def test_warm_start_shape_is_checked():
    gs = GradientSet.from_rows(np.array([[1.0, 0.0], [-2.0, 0.1]]))
    with pytest.raises(ShapeMismatchError):
        dual_qp_solve(gs, warm_start=np.zeros(3))
    warm = dual_qp_solve(gs, warm_start=dual_qp_solve(gs).lam)
    assert warm.g_tilde == pytest.approx([0.0, 0.05], abs=1e-6)


def test_iteration_limit_raises():
    gs = GradientSet.from_rows(np.array([[1.0, 0.0], [-2.0, 0.1]]))
    with pytest.raises(ConvergenceError):
        dual_qp_solve(gs, tol=1e-15, max_iter=0)


def test_compatibility_counts():
    gs = GradientSet.from_rows(np.array([[1.0, 0.0], [-1.0, 0.1]]))
    comp = compatibility(gs, direction=np.array([1.0, 0.0]))
    assert comp.incompatible.tolist() == [1]
    assert comp.fraction == 0.5
    assert compatibility(gs, direction=np.zeros(2)).degenerate


if __name__ == "__main__":
    test_two_sample_case()
    test_random_instances_match_active_set_oracle()
    test_compatible_batch_is_left_alone()
    test_warm_start_shape_is_checked()
    test_iteration_limit_raises()
    test_compatibility_counts()

    print("✅ All QP tests passed!")
