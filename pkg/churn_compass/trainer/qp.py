"""Gradient compatibility and the incompatible-gradient projection.

The projection solves

    min_x 1/2 ||x - g||^2   s.t.  <x, g_j> >= 0 for every sample j

through its dual over lambda >= 0,

    min 1/2 lambda^T (G G^T) lambda + (G g)^T lambda,

and recovers x = g + G^T lambda. The dual gradient at lambda is G x, so the
dual KKT conditions are exactly primal feasibility plus complementary slackness.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConvergenceError, InvalidInputError, ShapeMismatchError
from .network import GradientSet

logger = logging.getLogger(__name__)

POWER_ITERATIONS = 50
_POLISH_EVERY = 25


@dataclass(frozen=True, eq=False)
class Compatibility:
    """Cosine of each per-sample gradient with a reference direction."""
    cosines: np.ndarray
    incompatible: np.ndarray
    degenerate: bool = False

    @property
    def count(self) -> int:
        return int(self.incompatible.shape[0])

    @property
    def fraction(self) -> float:
        n = self.cosines.shape[0]
        return self.count / n if n else 0.0


def _cosines(direction: np.ndarray, rows: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(direction)
    row_norms = np.linalg.norm(rows, axis=1)
    dots = rows @ direction
    out = np.zeros(rows.shape[0], dtype=np.float64)
    ok = row_norms > 0
    if norm > 0:
        out[ok] = dots[ok] / (norm * row_norms[ok])
    return out


def compatibility(
    gradset: GradientSet, direction: Optional[np.ndarray] = None, margin: float = 0.0
) -> Compatibility:
    """Cosines against the batch gradient (or `direction`); incompatible means cosine < -margin.

    A zero reference direction gives an all-zero, empty result with
    ``degenerate`` set.
    """
    ref = gradset.mean if direction is None else np.asarray(direction, dtype=np.float64)
    if ref.shape != (gradset.n_params,):
        raise ShapeMismatchError(f"direction {ref.shape} for {gradset.n_params} parameters")
    if not np.any(ref):
        return Compatibility(
            cosines=np.zeros(gradset.n), incompatible=np.zeros(0, dtype=np.int64), degenerate=True
        )
    cos = _cosines(ref, gradset.per_sample)
    return Compatibility(cosines=cos, incompatible=np.flatnonzero(cos < -margin))


@dataclass(frozen=True, eq=False)
class QpSolution:
    lam: np.ndarray
    g_tilde: np.ndarray
    iterations: int
    residuals: dict = field(default_factory=dict)
    polished: bool = False

    @property
    def objective(self) -> float:
        """1/2 ||g_tilde - g||^2."""
        return float(self.residuals.get("objective", 0.0))


def _top_eigenvalue(q: np.ndarray) -> float:
    # Fixed start vector keeps the solver deterministic.
    v = np.random.default_rng(0).standard_normal(q.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(POWER_ITERATIONS):
        w = q @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        est = float(v @ w)
        v = w / norm
    return max(est, float(np.linalg.norm(q @ v)))


class _DualProblem:
    """Dual data plus the residuals, all evaluated without forming g_tilde."""

    def __init__(self, gradset: GradientSet):
        self.rows = gradset.per_sample
        self.g = gradset.mean
        self.q = self.rows @ self.rows.T
        self.c = self.rows @ self.g
        self.row_norms = np.sqrt(np.maximum(np.diag(self.q), 0.0))
        self.g_norm2 = float(self.g @ self.g)

    def gradient(self, lam: np.ndarray) -> np.ndarray:
        # Equals G g_tilde, i.e. <g_tilde, g_j> for every j.
        return self.q @ lam + self.c

    def residuals(self, lam: np.ndarray, grad: np.ndarray) -> dict:
        projected = np.where(lam > 0, grad, np.minimum(grad, 0.0))
        quad = float(lam @ (self.q @ lam))
        tilde_norm = np.sqrt(max(self.g_norm2 + 2.0 * float(self.c @ lam) + quad, 0.0))
        cos = np.zeros_like(grad)
        ok = self.row_norms > 0
        if tilde_norm > 0:
            cos[ok] = grad[ok] / (tilde_norm * self.row_norms[ok])
        pg = float(np.linalg.norm(projected))
        slack = float(np.max(np.abs(lam * grad))) if lam.size else 0.0
        scale = max(self.g_norm2, 1e-300)
        return {
            "projected_gradient": pg,
            "relative_projected_gradient": pg / scale,
            "primal": float(max(0.0, -cos.min())) if cos.size else 0.0,
            "slackness": slack,
            "relative_slackness": slack / scale,
            "objective": 0.5 * quad,
        }

    def solution(self, lam: np.ndarray, iterations: int, res: dict, polished: bool = False) -> QpSolution:
        return QpSolution(
            lam=lam,
            g_tilde=self.g + self.rows.T @ lam,
            iterations=iterations,
            residuals=res,
            polished=polished,
        )


def _converged(res: dict, tol: float) -> bool:
    # Primal feasibility is scale-free; slackness and the projected gradient
    # carry squared-gradient units and are compared relative to ||g||^2.
    if res["primal"] > tol:
        return False
    return res["relative_slackness"] <= tol or res["relative_projected_gradient"] < tol


def dual_qp_solve(
    gradset: GradientSet,
    tol: float = 1e-6,
    max_iter: int = 20000,
    warm_start: Optional[np.ndarray] = None,
) -> QpSolution:
    """Project the batch gradient onto the cone compatible with every per-sample gradient.

    Accelerated projected gradient on the dual with step 1/L, restarted
    whenever momentum points uphill. Every few iterations the support of
    lambda is re-solved exactly by least squares; that solution is kept only
    if it meets the KKT tolerance.

    Raises:
        ConvergenceError: max_iter reached; carries the final residuals.
    """
    if tol <= 0 or max_iter < 0:
        raise InvalidInputError(f"need tol > 0 and max_iter >= 0, got {tol}, {max_iter}")
    dual = _DualProblem(gradset)
    n = gradset.n

    if warm_start is None:
        lam = np.zeros(n)
    else:
        lam = np.maximum(np.asarray(warm_start, dtype=np.float64), 0.0)
        if lam.shape != (n,):
            raise ShapeMismatchError(f"warm start of shape {lam.shape} for {n} samples")

    res = dual.residuals(lam, dual.gradient(lam))
    if _converged(res, tol):
        return dual.solution(lam, 0, res)
    if warm_start is not None:
        # A stale warm start may be worse than starting from zero.
        zero = np.zeros(n)
        zero_res = dual.residuals(zero, dual.c)
        if _converged(zero_res, tol):
            return dual.solution(zero, 0, zero_res)

    lipschitz = _top_eigenvalue(dual.q) * 1.01
    if lipschitz <= 0:
        zero = np.zeros(n)
        return dual.solution(zero, 0, dual.residuals(zero, dual.c))
    step = 1.0 / lipschitz

    y = lam.copy()
    t = 1.0
    for it in range(1, max_iter + 1):
        nxt = np.maximum(y - step * dual.gradient(y), 0.0)
        if np.dot(y - nxt, nxt - lam) > 0:
            t = 1.0
            y = nxt.copy()
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = nxt + ((t - 1.0) / t_next) * (nxt - lam)
            t = t_next
        lam = nxt

        res = dual.residuals(lam, dual.gradient(lam))
        if _converged(res, tol):
            return dual.solution(lam, it, res)

        if it % _POLISH_EVERY == 0:
            support = np.flatnonzero(lam > 0)
            if support.size:
                sol, *_ = np.linalg.lstsq(
                    dual.q[np.ix_(support, support)], -dual.c[support], rcond=None
                )
                if np.all(sol >= 0):
                    cand = np.zeros(n)
                    cand[support] = sol
                    cand_res = dual.residuals(cand, dual.gradient(cand))
                    if _converged(cand_res, tol):
                        logger.debug("qp: active-set polish accepted at iteration %d", it)
                        return dual.solution(cand, it, cand_res, polished=True)

    raise ConvergenceError(f"dual QP did not converge in {max_iter} iterations", residuals=res)
