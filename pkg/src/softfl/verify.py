"""Fast built-in property checks, run by ``softfl --verify``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import ExperimentConfig, Seeds, Shard
from .datagen import PartitionPattern, generate_federation
from .fedsoft import aggregation_weights, sampling_distribution, select_clients
from .metrics import run_joint_convergence
from .models import LINEAR_REGRESSION, MULTINOMIAL_LOGISTIC, LossModel, batch_gradient, batch_risk
from .proximal import ProximalProblem, proximal_gradient, proximal_value, solve_closed_form


def central_difference(f: Callable[[np.ndarray], float], w: np.ndarray, direction: np.ndarray, h: float = 1e-5) -> float:
    return (f(w + h * direction) - f(w - h * direction)) / (2 * h)


def _gradient_check(rng) -> str | None:
    for model in (LossModel(LINEAR_REGRESSION, 5), LossModel(MULTINOMIAL_LOGISTIC, 4, 3)):
        x = rng.standard_normal((30, model.d_in))
        y = rng.standard_normal(30) if model.kind == LINEAR_REGRESSION else rng.integers(0, 3, 30)
        shard = Shard(x, y)
        for _ in range(20):
            w = rng.standard_normal(model.dim)
            u = rng.standard_normal(model.dim)
            u /= np.linalg.norm(u)
            fd = central_difference(lambda v: batch_risk(model, v, shard), w, u)
            an = float(batch_gradient(model, w, shard) @ u)
            if abs(fd - an) > 1e-4 * max(1.0, abs(an)):
                return f"{model.kind}: analytic {an} vs finite difference {fd}"
    return None


def _closed_form_residual(rng) -> str | None:
    model = LossModel(LINEAR_REGRESSION, 6)
    for _ in range(10):
        shard = Shard(rng.standard_normal((40, 6)), rng.standard_normal(40))
        prob = ProximalProblem(shard, rng.standard_normal((3, 6)), rng.uniform(0.01, 1, 3), float(rng.uniform(0.1, 3)), model)
        r = np.linalg.norm(proximal_gradient(prob, solve_closed_form(prob)))
        if r > 1e-8:
            return f"stationarity residual {r}"
    return None


def _proximal_gradient_check(rng) -> str | None:
    model = LossModel(LINEAR_REGRESSION, 4)
    shard = Shard(rng.standard_normal((25, 4)), rng.standard_normal(25))
    prob = ProximalProblem(shard, rng.standard_normal((2, 4)), np.array([0.3, 0.8]), 0.7, model)
    for _ in range(20):
        w, u = rng.standard_normal(4), rng.standard_normal(4)
        fd = central_difference(lambda v: proximal_value(prob, v), w, u)
        an = float(proximal_gradient(prob, w) @ u)
        if abs(fd - an) > 1e-4 * max(1.0, abs(an)):
            return f"analytic {an} vs finite difference {fd}"
    return None


def _weights_normalized(rng) -> str | None:
    u = rng.uniform(1e-4, 1, (50, 3))
    n = rng.integers(100, 201, 50)
    for s in range(3):
        sel = rng.integers(0, 50, 10)
        for v in (aggregation_weights(u, n, sel, s), sampling_distribution(u, n, s)):
            if abs(v.sum() - 1) > 1e-12:
                return f"weights sum to {v.sum()}"
    return None


def _selection_count(rng) -> str | None:
    N, K, S, rounds = 100, 60, 2, 300
    dist = np.full((S, N), 1.0 / N)
    counts = [len(select_clients(dist, K, rng, replace=False).unique_clients) for _ in range(rounds)]
    expected = N * (1 - (1 - K / N) ** S)
    se = np.std(counts, ddof=1) / np.sqrt(rounds)
    if abs(np.mean(counts) - expected) > 4 * se:
        return f"mean unique {np.mean(counts):.2f} vs {expected:.2f} (se {se:.3f})"
    return None


def _joint_monotone(rng) -> str | None:
    config = ExperimentConfig(N=20, K=10, T=20, holdout_size=50, seeds=Seeds(7, 8, 9))
    dataset = generate_federation(config, 10.0, PartitionPattern.parse("30:70"))
    run = run_joint_convergence(config, dataset, LossModel(LINEAR_REGRESSION, config.d))
    steps = np.diff(np.concatenate([[run.initial_objective], run.objectives]))
    if steps.max() > 1e-9:
        return f"objective increased by {steps.max()}"
    return None


CHECKS = {
    "loss gradients match finite differences": _gradient_check,
    "closed-form proximal solve is stationary": _closed_form_residual,
    "proximal gradient matches finite differences": _proximal_gradient_check,
    "aggregation and sampling weights sum to one": _weights_normalized,
    "unique selection count matches N(1-(1-K/N)^S)": _selection_count,
    "joint objective is non-increasing": _joint_monotone,
}


def run_checks(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    results = []
    for name, check in CHECKS.items():
        failure = check(rng)
        results.append((name, failure is None, failure or ""))
    return results
