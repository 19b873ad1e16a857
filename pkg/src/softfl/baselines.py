"""IFCA and FedEM on the same data, models, solvers and traces as FedSoft.

IFCA assigns each participating client to its lowest-loss center and
averages plain local solves per cluster.  FedEM computes per-point
responsibilities ``pi_ks * exp(-loss)`` (normalized in the log domain) and
runs one responsibility-weighted solve per cluster on every participating
client, so its per-round workload is ``S`` solves per client.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .core import ConfigurationError, ExperimentConfig, FederationDataset, Shard, SolverConfig, SolverDivergenceError
from .fedsoft import ExperimentResult, SELECTION_STREAM, client_rng, initial_centers
from .metrics import Evaluator
from .models import LossModel
from .proximal import ProximalProblem, solve_iterative

IFCA = "ifca"
FEDEM = "fedem"
FEDEM_STREAM = 3


def _local_solve(
    shard: Shard,
    start: np.ndarray,
    model: LossModel,
    solver: SolverConfig,
    rng: np.random.Generator,
    sample_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Minimize the (optionally sample-weighted) local risk starting from ``start``.

    The closed-form branch returns the minimum-norm step away from ``start``,
    which stays well defined when the weighted design is rank deficient.
    """
    prob = ProximalProblem(shard, start[None, :], np.zeros(1), 0.0, model, sample_weights)
    if solver.kind == "gradient_iterative":
        return solve_iterative(prob, solver, rng, start)
    if not model.is_quadratic:
        raise ConfigurationError("closed-form local solves need the linear regression model")
    G, b = prob.gram
    step, *_ = np.linalg.lstsq(2.0 * G, 2.0 * (b - G @ start), rcond=None)
    return start + step


def participants(N: int, S: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``min(S * K, N)`` distinct clients, sorted."""
    return np.sort(rng.choice(N, size=min(S * K, N), replace=False))


def cluster_losses(shard: Shard, centers: np.ndarray, model: LossModel) -> np.ndarray:
    return model.losses_per_center(centers, shard.x, shard.y).mean(axis=0)


def ifca_round(
    centers: np.ndarray,
    shards: list[Shard],
    model: LossModel,
    K: int,
    solver: SolverConfig,
    rng: np.random.Generator,
    round_index: int = 0,
    solver_seed: int = 0,
) -> tuple[np.ndarray, dict[int, int]]:
    """One IFCA round; returns the new centers and the participants' assignments."""
    S = centers.shape[0]
    chosen = participants(len(shards), S, K, rng)
    assignment, models = {}, {}
    for k in chosen:
        k = int(k)
        s = int(np.argmin(cluster_losses(shards[k], centers, model)))
        assignment[k] = s
        models[k] = _local_solve(shards[k], centers[s], model, solver, client_rng(solver_seed, round_index, k))
    new_centers = centers.copy()
    for s in range(S):
        members = [k for k in chosen if assignment[int(k)] == s]
        if not members:
            continue
        sizes = np.array([len(shards[k]) for k in members], dtype=np.float64)
        new_centers[s] = sizes @ np.array([models[k] for k in members]) / sizes.sum()
    return new_centers, assignment


def responsibilities(shard: Shard, centers: np.ndarray, pi_row: np.ndarray, model: LossModel) -> np.ndarray:
    """``(n, S)`` posterior over clusters per point, normalized in the log domain."""
    with np.errstate(divide="ignore"):
        log_prior = np.log(pi_row)
    losses = model.losses_per_center(centers, shard.x, shard.y)
    # shifting by the row minimum keeps equal losses cancelling without roundoff
    logits = log_prior[None, :] - (losses - losses.min(axis=1, keepdims=True))
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def fedem_round(
    centers: np.ndarray,
    shards: list[Shard],
    pi: np.ndarray,
    model: LossModel,
    solver: SolverConfig,
    rng: np.random.Generator,
    K: int | None = None,
    round_index: int = 0,
    solver_seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, int]:
    """One FedEM round; returns ``(centers', pi', local_solves)``."""
    S = centers.shape[0]
    N = len(shards)
    chosen = participants(N, S, K if K is not None else N, rng)
    pi_next = pi.copy()
    numer = np.zeros_like(centers)
    denom = np.zeros(S)
    solves = 0
    for k in chosen:
        k = int(k)
        resp = responsibilities(shards[k], centers, pi[k], model)
        pi_next[k] = resp.mean(axis=0)
        pi_next[k] /= pi_next[k].sum()
        n_k = len(shards[k])
        for s in range(S):
            rng_ks = client_rng(solver_seed, round_index, k * S + s, stream=FEDEM_STREAM)
            w = _local_solve(shards[k], centers[s], model, solver, rng_ks, resp[:, s])
            solves += 1
            numer[s] += n_k * pi_next[k, s] * w
            denom[s] += n_k * pi_next[k, s]
    new_centers = centers.copy()
    for s in range(S):
        if denom[s] > 0:
            new_centers[s] = numer[s] / denom[s]
    return new_centers, pi_next, solves


def baseline_local_model(centers: np.ndarray, assignment: int | None = None, pi_row: np.ndarray | None = None) -> np.ndarray:
    """IFCA: the assigned center.  FedEM: the center with the largest mixture weight."""
    if assignment is None:
        assignment = int(np.argmax(pi_row))
    return centers[assignment]


def _one_hot(assignment: np.ndarray, S: int) -> np.ndarray:
    return np.eye(S)[assignment]


def run_baseline(kind: str, config: ExperimentConfig, dataset: FederationDataset, model: LossModel) -> ExperimentResult:
    """Run IFCA or FedEM for ``config.T`` rounds from FedSoft's initial centers."""
    if kind not in (IFCA, FEDEM):
        raise ConfigurationError(f"unknown baseline {kind!r}")
    evaluator = Evaluator(dataset, model)
    shards = evaluator.shards
    S, N = config.S, dataset.N
    centers = initial_centers(config, model.dim)
    rng = np.random.default_rng(np.random.SeedSequence(config.seeds.selection_seed, spawn_key=(SELECTION_STREAM,)))
    assignment = np.array([int(np.argmin(cluster_losses(s, centers, model))) for s in shards])
    pi = np.full((N, S), 1.0 / S)
    traces = []
    for t in range(config.T):
        try:
            if kind == IFCA:
                centers, assigned = ifca_round(centers, shards, model, config.K, config.solver, rng, t, config.seeds.selection_seed)
                for k, s in assigned.items():
                    assignment[k] = s
                weights = _one_hot(assignment, S)
                active, solves = len(assigned), len(assigned)
            else:
                centers, pi, solves = fedem_round(centers, shards, pi, model, config.solver, rng, config.K, t, config.seeds.selection_seed)
                weights = pi
                active = solves // S
        except SolverDivergenceError as exc:
            exc.round_index = t
            exc.partial_traces = traces
            raise
        if kind == IFCA:
            local = np.array([baseline_local_model(centers, assignment=int(a)) for a in assignment])
        else:
            local = np.array([baseline_local_model(centers, pi_row=row) for row in pi])
        traces.append(
            evaluator.trace(
                t,
                centers,
                local,
                weights,
                unique_selected=active,
                participants=active,
                local_solves=solves,
                broadcast_values=S * model.dim * active,
            )
        )
    importances = _one_hot(assignment, S) if kind == IFCA else pi
    return ExperimentResult(centers, local, traces, importances, extras={"algorithm": kind})
