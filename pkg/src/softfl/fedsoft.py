"""FedSoft: importance estimation, importance-proportional selection,
one proximal solve per selected client, and 1/K center averaging.

Client-side work in a round reads an immutable snapshot of the centers, and
every client's solver randomness comes from its own substream keyed by
``(round, client id)``, so results do not depend on client execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    ClientState,
    ContractViolation,
    ExperimentConfig,
    FederationDataset,
    RoundTrace,
    SolverDivergenceError,
)
from .metrics import Evaluator
from .models import LossModel
from .proximal import ProximalProblem, solve

INIT_STREAM = 0
SELECTION_STREAM = 1
SOLVER_STREAM = 2


def initial_centers(config: ExperimentConfig, dim: int) -> np.ndarray:
    """Centers drawn i.i.d. ``N(0, 1/dim)`` per coordinate from the init seed."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seeds.init_seed, spawn_key=(INIT_STREAM,)))
    return rng.normal(0.0, np.sqrt(1.0 / dim), size=(config.S, dim))


def client_rng(seed: int, round_index: int, client_id: int, stream: int = SOLVER_STREAM) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, round_index, client_id)))


def estimate_importance(client: ClientState, centers: np.ndarray, model: LossModel, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Match each point to its lowest-loss center and floor the match ratios at ``sigma``.

    Returns ``(match_counts, importance)``.  The floored vector is not
    renormalized, so its sum can exceed one.
    """
    if len(centers) == 0:
        raise ContractViolation("no centers to match against")
    losses = model.losses_per_center(centers, client.shard.x, client.shard.y)
    matches = np.argmin(losses, axis=1)  # first minimum wins ties
    counts = np.bincount(matches, minlength=len(centers)).astype(np.int64)
    return counts, np.maximum(counts / client.n, sigma)


def aggregation_weights(importances: np.ndarray, shard_sizes: np.ndarray, selected, s: int) -> np.ndarray:
    """``v_sk`` proportional to ``u_ks * n_k`` over the selected clients."""
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0:
        raise ContractViolation("aggregation weights need at least one selected client")
    mass = importances[selected, s] * shard_sizes[selected]
    return mass / mass.sum()


def sampling_distribution(importances: np.ndarray, shard_sizes: np.ndarray, s: int) -> np.ndarray:
    """Selection probabilities for cluster ``s`` over the whole population."""
    return aggregation_weights(importances, shard_sizes, np.arange(len(shard_sizes)), s)


@dataclass(frozen=True)
class SelectionOutcome:
    per_cluster: tuple[tuple[int, ...], ...]
    unique_clients: tuple[int, ...]


def select_clients(dist: np.ndarray, K: int, rng: np.random.Generator, replace: bool = True) -> SelectionOutcome:
    """Draw ``K`` clients per cluster from each row of ``dist``.

    With ``replace`` (the default) the draws are independent, so a client can
    appear more than once in one cluster's list and is then averaged in with
    multiplicity.  Without it, each list holds ``K`` distinct clients.
    """
    dist = np.atleast_2d(dist)
    per_cluster = []
    for p in dist:
        if not abs(p.sum() - 1.0) < 1e-9:
            raise ContractViolation(f"selection probabilities sum to {p.sum()}, not 1")
        ids = rng.choice(len(p), size=K, replace=replace, p=p)
        per_cluster.append(tuple(int(k) for k in ids))
    unique = tuple(sorted(set().union(*per_cluster)))
    return SelectionOutcome(tuple(per_cluster), unique)


def aggregate_centers(selected_models, K: int) -> np.ndarray:
    """Unweighted mean of the ``K`` (with multiplicity) models reported to each cluster."""
    out = []
    for s, models in enumerate(selected_models):
        models = np.asarray(models, dtype=np.float64)
        if models.shape[0] != K:
            raise ContractViolation(f"cluster {s} received {models.shape[0]} models, expected {K}")
        out.append(models.mean(axis=0))
    return np.array(out)


@dataclass
class ServerState:
    centers: np.ndarray
    round: int
    config: ExperimentConfig
    selection_rng: np.random.Generator = field(repr=False)


def make_clients(dataset: FederationDataset, centers: np.ndarray) -> list[ClientState]:
    S = centers.shape[0]
    start = centers.mean(axis=0)
    return [
        ClientState(
            id=k,
            shard=data.view(),
            local_model=start.copy(),
            importance=np.full(S, 1.0 / S),
            match_counts=np.zeros(S, dtype=np.int64),
        )
        for k, data in enumerate(dataset.clients)
    ]


def run_round(
    server: ServerState,
    clients: list[ClientState],
    model: LossModel,
    evaluator: Evaluator | None = None,
) -> tuple[ServerState, RoundTrace | None, SelectionOutcome]:
    """One pass of the main loop.  Mutates ``clients`` and returns the next server state."""
    config = server.config
    t = server.round
    centers = server.centers
    estimated = t % config.tau == 0
    if estimated:
        for client in clients:
            client.match_counts, client.importance = estimate_importance(client, centers, model, config.sigma)
            client.last_estimated_round = t

    importances = np.array([c.importance for c in clients])
    sizes = np.array([c.n for c in clients])
    dist = np.array([sampling_distribution(importances, sizes, s) for s in range(config.S)])
    selection = select_clients(dist, config.K, server.selection_rng, config.selection_replacement)

    new_models = {}
    for k in selection.unique_clients:
        client = clients[k]
        prob = ProximalProblem(client.shard, centers, client.importance, config.lam, model)
        try:
            new_models[k] = solve(prob, config.solver, client_rng(config.seeds.selection_seed, t, k), client.local_model)
        except SolverDivergenceError as exc:
            exc.round_index = t
            raise
    for k, w in new_models.items():
        clients[k].local_model = w
        clients[k].never_selected = False

    next_centers = aggregate_centers([[new_models[k] for k in ids] for ids in selection.per_cluster], config.K)
    trace = None
    if evaluator is not None:
        trace = evaluator.trace(
            t,
            next_centers,
            np.array([c.local_model for c in clients]),
            importances,
            unique_selected=len(selection.unique_clients),
            participants=len(selection.unique_clients),
            local_solves=len(new_models),
            broadcast_values=config.S * model.dim * len(clients) if estimated else 0,
        )
    return replace(server, centers=next_centers, round=t + 1), trace, selection


@dataclass
class ExperimentResult:
    centers: np.ndarray
    local_models: np.ndarray
    traces: list[RoundTrace]
    importances: np.ndarray
    never_selected: list[int] = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def run_experiment(config: ExperimentConfig, dataset: FederationDataset, model: LossModel) -> ExperimentResult:
    """Run ``config.T`` rounds from the seeded initial centers.

    A solver divergence is re-raised with ``partial_traces`` attached.
    """
    if dataset.N != config.N or dataset.S != config.S:
        raise ContractViolation(f"dataset has N={dataset.N}, S={dataset.S}; config has N={config.N}, S={config.S}")
    evaluator = Evaluator(dataset, model)
    centers = initial_centers(config, model.dim)
    clients = make_clients(dataset, centers)
    selection_rng = np.random.default_rng(np.random.SeedSequence(config.seeds.selection_seed, spawn_key=(SELECTION_STREAM,)))
    server = ServerState(centers, 0, config, selection_rng)
    traces: list[RoundTrace] = []
    for _ in range(config.T):
        try:
            server, trace, _ = run_round(server, clients, model, evaluator)
        except SolverDivergenceError as exc:
            exc.partial_traces = traces
            raise
        traces.append(trace)
    return ExperimentResult(
        centers=server.centers,
        local_models=np.array([c.local_model for c in clients]),
        traces=traces,
        importances=np.array([c.importance for c in clients]),
        never_selected=[c.id for c in clients if c.never_selected],
    )
