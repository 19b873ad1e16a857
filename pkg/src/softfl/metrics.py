"""Evaluation and diagnostics over trained centers and local models.

This is the only module that reads ground-truth source labels and mixtures.
It also hosts the joint-convergence harness: full participation, exact
local solves, frozen importance weights and weighted-mean center updates,
i.e. cyclic block coordinate descent on the summed proximal objective.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ConfigurationError, ContractViolation, ExperimentConfig, FederationDataset, RoundTrace, Shard
from .models import LossModel, batch_risk
from .proximal import ProximalProblem, proximal_value, solve_closed_form


def holdout_matrix(centers: np.ndarray, holdouts: list[Shard], model: LossModel) -> np.ndarray:
    """Entry ``(i, s)`` is the risk of center ``s`` on holdout distribution ``i``."""
    if not holdouts:
        raise ContractViolation("no holdout sets")
    return np.array([[batch_risk(model, c, h) for c in centers] for h in holdouts])


def accuracy_matrix(centers: np.ndarray, holdouts: list[Shard], model: LossModel) -> np.ndarray:
    return np.array([[float(np.mean(model.predict_class(c, h.x) == h.y)) for c in centers] for h in holdouts])


@dataclass(frozen=True)
class Association:
    mapping: tuple[int, ...]
    distinct: bool

    def as_dict(self) -> dict[str, int]:
        return {str(i): s for i, s in enumerate(self.mapping)}


def association(matrix: np.ndarray) -> Association:
    """Best (lowest-loss) center per holdout row; ties go to the lowest index."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractViolation(f"association needs a square matrix, got {matrix.shape}")
    mapping = tuple(int(j) for j in np.argmin(matrix, axis=1))
    return Association(mapping, len(set(mapping)) == len(mapping))


def diagonal_dominates(matrix: np.ndarray) -> bool:
    """Association is distinct and each best-center entry is strictly below the rest of its row."""
    assoc = association(matrix)
    if not assoc.distinct:
        return False
    for i, best in enumerate(assoc.mapping):
        others = np.delete(matrix[i], best)
        if others.size and not np.all(matrix[i, best] < others):
            return False
    return True


def center_alignment(matrix: np.ndarray) -> tuple[int, ...]:
    """Center assigned to each distribution: the association when it is distinct,
    otherwise the loss-minimizing one-to-one matching."""
    assoc = association(matrix)
    if assoc.distinct:
        return assoc.mapping
    rows, cols = linear_sum_assignment(matrix)
    return tuple(int(c) for c in cols[np.argsort(rows)])


def importance_error(importances: np.ndarray, true_mixture: np.ndarray, alignment=None) -> float:
    """Mean over clients of the L1 distance between estimated and true weights.

    ``alignment[i]`` names the center whose weight estimates distribution
    ``i``; by default center ``i`` does.
    """
    importances = np.asarray(importances)
    if alignment is not None:
        importances = importances[:, list(alignment)]
    return float(np.mean(np.sum(np.abs(importances - true_mixture), axis=1)))


def cluster_divergence(vectors: np.ndarray) -> tuple[float, float]:
    """Minimum and maximum pairwise Euclidean distance among the rows of ``vectors``."""
    vectors = np.asarray(vectors, dtype=np.float64)
    vectors = vectors.reshape(vectors.shape[0], -1)
    if vectors.shape[0] < 2:
        raise ConfigurationError("divergence is undefined for fewer than two clusters")
    dists = [float(np.linalg.norm(a - b)) for a, b in itertools.combinations(vectors, 2)]
    return min(dists), max(dists)


def joint_objective(
    shards: list[Shard],
    local_models: np.ndarray,
    centers: np.ndarray,
    weights: np.ndarray,
    lam: float,
    model: LossModel,
) -> float:
    """Sum over clients of the proximal objective at their current local models."""
    return float(
        sum(
            proximal_value(ProximalProblem(shard, centers, weights[k], lam, model), local_models[k])
            for k, shard in enumerate(shards)
        )
    )


def weighted_center_update(local_models: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Minimizer of the summed objective over the centers: ``c_s = sum_k u_ks w_k / sum_k u_ks``."""
    return (weights.T @ local_models) / weights.sum(axis=0)[:, None]


class Evaluator:
    """Computes the per-round trace fields from ground truth held privately."""

    def __init__(self, dataset: FederationDataset, model: LossModel):
        self.model = model
        self.holdouts = [h.view() for h in dataset.holdouts]
        self.shards = [c.view() for c in dataset.clients]
        self.true_mixture = dataset.true_mixture
        self.classification = dataset.is_classification

    def holdout_losses(self, centers: np.ndarray) -> np.ndarray:
        return holdout_matrix(centers, self.holdouts, self.model)

    def mean_local_loss(self, local_models: np.ndarray) -> float:
        return float(np.mean([batch_risk(self.model, w, s) for w, s in zip(local_models, self.shards)]))

    def trace(self, t: int, centers: np.ndarray, local_models: np.ndarray, importances: np.ndarray, **extra) -> RoundTrace:
        losses = self.holdout_losses(centers)
        return RoundTrace(
            round=t,
            holdout_losses=losses,
            mean_local_loss=self.mean_local_loss(local_models),
            importance_error=importance_error(importances, self.true_mixture, center_alignment(losses)),
            **extra,
        )


def best_center_loss(matrix: np.ndarray) -> float:
    """Mean over holdout distributions of the lowest loss any center achieves."""
    return float(np.mean(np.min(matrix, axis=1)))


@dataclass
class JointRun:
    initial_objective: float
    centers: np.ndarray
    local_models: np.ndarray
    traces: list[RoundTrace]

    @property
    def objectives(self) -> np.ndarray:
        return np.array([t.joint_objective for t in self.traces])


def run_joint_convergence(config: ExperimentConfig, dataset: FederationDataset, model: LossModel) -> JointRun:
    """Block coordinate descent on the summed proximal objective with frozen true weights.

    Every client solves exactly each round, then every center moves to the
    weighted mean of the local models.  The objective cannot increase.
    """
    from .fedsoft import initial_centers

    if not model.is_quadratic:
        raise ConfigurationError("the joint-convergence harness needs exact (linear regression) solves")
    evaluator = Evaluator(dataset, model)
    weights = dataset.true_mixture
    shards = evaluator.shards
    centers = initial_centers(config, model.dim)
    local_models = np.tile(centers.mean(axis=0), (len(shards), 1))
    start = joint_objective(shards, local_models, centers, weights, config.lam, model)
    traces = []
    for t in range(config.T):
        local_models = np.array(
            [solve_closed_form(ProximalProblem(shard, centers, weights[k], config.lam, model)) for k, shard in enumerate(shards)]
        )
        centers = weighted_center_update(local_models, weights)
        traces.append(
            evaluator.trace(
                t,
                centers,
                local_models,
                weights,
                unique_selected=len(shards),
                participants=len(shards),
                local_solves=len(shards),
                joint_objective=joint_objective(shards, local_models, centers, weights, config.lam, model),
            )
        )
    return JointRun(start, centers, local_models, traces)
