"""The proximal client objective and its solvers.

For a client with shard risk ``f`` the objective is

    h(w) = f(w) + (lam / 2) * sum_s u_s * ||w - c_s||^2

``solve_closed_form`` is exact for linear regression and doubles as the
oracle for ``solve_iterative``.  The two ``measure_*`` functions turn the
inexactness and sub-problem similarity conditions of the convergence
analysis into numbers for a concrete state.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .core import (
    ContractViolation,
    DegenerateProblemError,
    Shard,
    SolverConfig,
    SolverDivergenceError,
)
from .models import LossModel, batch_gradient, batch_risk

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class ProximalProblem:
    shard: Shard
    centers: np.ndarray
    weights: np.ndarray
    lam: float
    model: LossModel
    sample_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.centers.ndim != 2 or self.centers.shape[1] != self.model.dim:
            raise ContractViolation(f"centers shape {self.centers.shape} does not match model dimension {self.model.dim}")
        if self.weights.shape != (self.centers.shape[0],):
            raise ContractViolation(f"need one weight per center, got {self.weights.shape} for S={self.centers.shape[0]}")
        if self.lam < 0:
            raise ContractViolation("lam >= 0 required")
        if len(self.shard) == 0:
            raise ContractViolation("empty shard")

    @property
    def weight_sum(self) -> float:
        return float(self.weights.sum())

    @cached_property
    def anchor(self) -> np.ndarray:
        """``sum_s u_s c_s``; the prox gradient is ``lam * (sum(u) * w - anchor)``."""
        return self.weights @ self.centers

    @property
    def prox_center(self) -> np.ndarray:
        """Minimizer of the proximal term alone; the plain center mean when all weights vanish."""
        if self.weight_sum > 0:
            return self.anchor / self.weight_sum
        return self.centers.mean(axis=0)

    @cached_property
    def gram(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X^T R X / n, X^T R y / n)`` for the quadratic model, ``R`` the sample weights."""
        x, y = self.shard.x, self.shard.y
        n = len(y)
        xr = x if self.sample_weights is None else x * self.sample_weights[:, None]
        return xr.T @ x / n, xr.T @ y / n

    def risk(self, w: np.ndarray) -> float:
        if self.sample_weights is None:
            return batch_risk(self.model, w, self.shard)
        losses = self.model.losses(w, self.shard.x, self.shard.y)
        return float(losses @ self.sample_weights) / len(losses)

    def risk_gradient(self, w: np.ndarray) -> np.ndarray:
        if self.sample_weights is None:
            return batch_gradient(self.model, w, self.shard)
        return self.model.mean_gradient(w, self.shard.x, self.shard.y, self.sample_weights)

    def prox_gradient(self, w: np.ndarray) -> np.ndarray:
        return self.lam * (self.weight_sum * w - self.anchor)


def proximal_value(prob: ProximalProblem, w: np.ndarray) -> float:
    if w.shape != (prob.model.dim,):
        raise ContractViolation(f"w has shape {w.shape}, expected ({prob.model.dim},)")
    dist2 = np.sum((w[None, :] - prob.centers) ** 2, axis=1)
    return prob.risk(w) + 0.5 * prob.lam * float(prob.weights @ dist2)


def proximal_gradient(prob: ProximalProblem, w: np.ndarray) -> np.ndarray:
    if w.shape != (prob.model.dim,):
        raise ContractViolation(f"w has shape {w.shape}, expected ({prob.model.dim},)")
    return prob.risk_gradient(w) + prob.prox_gradient(w)


def _solve_spd(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        w = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateProblemError(str(exc)) from exc
    # one step of iterative refinement
    return w + np.linalg.solve(A, rhs - A @ w)


def solve_closed_form(prob: ProximalProblem) -> np.ndarray:
    """Exact minimizer of ``h`` for linear regression via its normal equations."""
    if not prob.model.is_quadratic:
        raise ContractViolation("closed-form solve needs the linear regression model")
    G, b = prob.gram
    shift = prob.lam * prob.weight_sum
    A = 2.0 * G + shift * np.eye(G.shape[0])
    if shift == 0.0 and np.linalg.matrix_rank(G) < G.shape[0]:
        raise DegenerateProblemError("lam * sum(u) = 0 and the shard design matrix is rank deficient")
    return _solve_spd(A, 2.0 * b + prob.lam * prob.anchor)


def solve_iterative(
    prob: ProximalProblem,
    solver: SolverConfig,
    rng: np.random.Generator,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """Mini-batch first-order minimization of ``h`` from ``start``.

    Without ``start`` the solver begins at ``prob.prox_center``.

    The shard is reshuffled at the start of every epoch using ``rng``.  With
    ``solver.adaptive`` the update is Adam with the usual default moments,
    otherwise plain SGD.
    """
    x, y = prob.shard.x, prob.shard.y
    r = prob.sample_weights
    n = len(y)
    model = prob.model
    w = np.array(prob.prox_center if start is None else start, dtype=np.float64)
    if w.shape != (model.dim,):
        raise ContractViolation(f"start has shape {w.shape}, expected ({model.dim},)")
    if model.is_quadratic:
        orders = np.array([rng.permutation(n) for _ in range(solver.local_epochs)], dtype=np.int64).reshape(-1, n)
        weights = np.ones(n) if r is None else np.asarray(r, dtype=np.float64)
        w, failed_step = _linear_minibatch(
            x, np.asarray(y, dtype=np.float64), weights, w, orders, solver.batch_size, solver.step_size,
            prob.lam, prob.weight_sum, prob.anchor, solver.adaptive,
        )
        if failed_step >= 0:
            raise SolverDivergenceError(f"non-finite iterate at step {failed_step + 1}", w)
        return w

    lr = solver.step_size
    b1, b2 = ADAM_BETAS
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    step = 0
    for epoch in range(solver.local_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, solver.batch_size):
            idx = order[lo : lo + solver.batch_size]
            rb = None if r is None else r[idx]
            g = model.mean_gradient(w, x[idx], y[idx], rb) + prob.prox_gradient(w)
            step += 1
            if solver.adaptive:
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                denom = np.sqrt(v / (1 - b2**step)) + ADAM_EPS
                w_next = w - (lr / (1 - b1**step)) * m / denom
            else:
                w_next = w - lr * g
            if not np.all(np.isfinite(w_next)):
                raise SolverDivergenceError(f"non-finite iterate at epoch {epoch}, step {step}", w)
            w = w_next
    return w


@numba.njit(cache=True)
def _linear_minibatch(x, y, r, w0, orders, batch_size, lr, lam, su, anchor, adaptive):
    """Squared-loss mini-batch loop; returns ``(w, failed_step)`` with ``failed_step = -1`` on success."""
    b1, b2 = 0.9, 0.999
    n, d = x.shape
    w = w0.copy()
    m = np.zeros(d)
    v = np.zeros(d)
    g = np.zeros(d)
    w_next = np.zeros(d)
    step = 0
    for e in range(orders.shape[0]):
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            for j in range(d):
                g[j] = lam * (su * w[j] - anchor[j])
            scale = 2.0 / (hi - lo)
            for i in range(lo, hi):
                p = orders[e, i]
                res = -y[p]
                for j in range(d):
                    res += x[p, j] * w[j]
                res *= scale * r[p]
                for j in range(d):
                    g[j] += res * x[p, j]
            step += 1
            ok = True
            if adaptive:
                c1 = lr / (1.0 - b1**step)
                c2 = 1.0 / (1.0 - b2**step)
                for j in range(d):
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j]
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j]
                    w_next[j] = w[j] - c1 * m[j] / (np.sqrt(v[j] * c2) + 1e-8)
                    if not np.isfinite(w_next[j]):
                        ok = False
            else:
                for j in range(d):
                    w_next[j] = w[j] - lr * g[j]
                    if not np.isfinite(w_next[j]):
                        ok = False
            if not ok:
                return w, step - 1
            w[:] = w_next
    return w, -1


def solve(prob: ProximalProblem, solver: SolverConfig, rng: np.random.Generator, start: np.ndarray | None = None) -> np.ndarray:
    if solver.kind == "closed_form":
        return solve_closed_form(prob)
    return solve_iterative(prob, solver, rng, start)


def cluster_gradient_norms(model: LossModel, centers: np.ndarray, holdouts: list[Shard]) -> np.ndarray:
    """``||grad F_s(c_s)||`` with ``F_s`` estimated on holdout ``s``."""
    return np.array([np.linalg.norm(batch_gradient(model, c, h)) for c, h in zip(centers, holdouts)])


def measure_inexactness(prob: ProximalProblem, w_out: np.ndarray, centers: np.ndarray, holdouts: list[Shard]) -> float:
    """Ratio of the residual gradient of ``h`` at ``w_out`` to the smallest cluster gradient."""
    denom = float(np.min(cluster_gradient_norms(prob.model, centers, holdouts)))
    if denom < 1e-12:
        return float("inf")
    return float(np.linalg.norm(proximal_gradient(prob, w_out))) / denom


def subproblem_value(model: LossModel, points: Shard, center: np.ndarray, lam: float, ratio: float, w: np.ndarray) -> float:
    """``F(w) + (lam/2) * ratio * ||w - c||^2`` with ``F`` the mean risk on ``points``."""
    return batch_risk(model, w, points) + 0.5 * lam * ratio * float(np.sum((w - center) ** 2))


def subproblem_gradient(model: LossModel, points: Shard, center: np.ndarray, lam: float, ratio: float, w: np.ndarray) -> np.ndarray:
    return batch_gradient(model, w, points) + lam * ratio * (w - center)


def subproblem_minimizer(points: Shard, center: np.ndarray, lam: float, ratio: float = 1.0) -> np.ndarray:
    n = len(points)
    G = points.x.T @ points.x / n
    b = points.x.T @ points.y / n
    A = 2.0 * G + lam * ratio * np.eye(G.shape[0])
    if lam * ratio == 0.0 and np.linalg.matrix_rank(G) < G.shape[0]:
        raise DegenerateProblemError("unregularized sub-problem with rank-deficient data")
    return _solve_spd(A, 2.0 * b + lam * ratio * center)


def measure_subproblem_similarity(prob: ProximalProblem, holdouts: list[Shard], true_weights: np.ndarray) -> float:
    """Smallest ``beta`` satisfying the sub-problem similarity condition at this state.

    Sub-problem ``s`` is ``F_s(w) + (lam/2) ||w - c_s||^2`` with ``F_s`` the
    holdout risk; clusters with zero true weight are skipped.
    """
    if not prob.model.is_quadratic:
        raise ContractViolation("similarity measurement needs the linear regression model")
    model, lam = prob.model, prob.lam
    active = [s for s in range(len(true_weights)) if true_weights[s] != 0]
    beta = 0.0
    for s in active:
        w_star = subproblem_minimizer(holdouts[s], prob.centers[s], lam)
        num = sum(
            true_weights[t]
            * float(np.sum(subproblem_gradient(model, holdouts[t], prob.centers[t], lam, 1.0, w_star) ** 2))
            for t in active
        )
        denom = float(np.sum(batch_gradient(model, prob.centers[s], holdouts[s]) ** 2))
        if denom == 0.0:
            return float("inf")
        beta = max(beta, num / denom)
    return beta
