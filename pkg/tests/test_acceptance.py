"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary and also when this file is run as a script.
"""

from __future__ import annotations

import math
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import central_difference
from softfl.config import build_spec
from softfl.core import ExperimentConfig, Seeds, SolverConfig
from softfl.datagen import PartitionPattern, generate_federation
from softfl.fedsoft import aggregate_centers, aggregation_weights, select_clients
from softfl.metrics import best_center_loss, diagonal_dominates
from softfl.models import LINEAR_REGRESSION, LossModel
from softfl.proximal import ProximalProblem, proximal_gradient, proximal_value, solve_closed_form, solve_iterative
from softfl.runner import execute, trace_csv

pytestmark = pytest.mark.slow

SEEDS = range(5)
VERDICTS: dict[int, str] = {}
ADAM = {"solver": "gradient_iterative", "adaptive": True}


def verdict(n: int, ok: bool, detail: str) -> None:
    VERDICTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(VERDICTS[n])
    assert ok, detail


def spec_for(seed: int, **values):
    seeds = {"data_seed": seed, "init_seed": 100 + seed, "selection_seed": 200 + seed}
    return build_spec({**seeds, **values})


@lru_cache(maxsize=None)
def run(seed: int, **values):
    spec = spec_for(seed, **values)
    start = time.perf_counter()
    outcome = execute(spec)
    assert outcome.ok, outcome.summary["error"]
    return outcome, time.perf_counter() - start


def _run(seed, values):
    return run(seed, **values)


TABLE1 = {"partition": "10:90", "sigma0": 10.0, "lambda": 1.0, "K": 60, "tau": 2, "solver": "closed_form", "T": 50}


def test_criterion_1_center_distribution_association():
    good, slowest = 0, 0.0
    for seed in SEEDS:
        outcome, seconds = _run(seed, TABLE1)
        good += diagonal_dominates(outcome.traces[-1].holdout_losses)
        slowest = max(slowest, seconds)
    verdict(1, good >= 4 and slowest <= 60, f"{good}/5 runs distinct and diagonal-dominant; slowest run {slowest:.2f}s")


def test_criterion_2_importance_weight_convergence():
    finals, improved = [], 0
    for seed in SEEDS:
        traces = _run(seed, TABLE1)[0].traces
        finals.append(traces[-1].importance_error)
        improved += traces[49].importance_error < traces[1].importance_error
    verdict(2, max(finals) <= 0.1 and improved == 5, f"final errors max {max(finals):.4f} (<= 0.1); T=50 below T=2 in {improved}/5 runs")


def test_criterion_3_divergence_sweep():
    start = time.perf_counter()
    means = []
    for sigma0 in (1.0, 10.0, 50.0, 100.0):
        losses = [_run(seed, {"partition": "random", "sigma0": sigma0})[0].traces[-1].mean_local_loss for seed in range(3)]
        means.append(float(np.mean(losses)))
    elapsed = time.perf_counter() - start
    increasing = all(a < b for a, b in zip(means, means[1:]))
    verdict(3, increasing and elapsed <= 300, f"seed-averaged local MSE {', '.join(f'{m:.4g}' for m in means)}; {elapsed:.1f}s")


def test_criterion_4_lambda_ablation():
    # expected to fail; see the decisions ledger for the fixed-point analysis
    best = {}
    for lam in (0.0, 1.0):
        values = {**TABLE1, "lambda": lam}
        best[lam] = float(np.mean([best_center_loss(_run(seed, values)[0].traces[-1].holdout_losses) for seed in SEEDS]))
    verdict(4, best[1.0] < best[0.0], f"best-center holdout MSE lambda=1: {best[1.0]:.4g} vs lambda=0: {best[0.0]:.4g}")


def test_criterion_5_joint_convergence():
    outcome, _ = _run(0, {"algorithm": "theorem5", "T": 100})
    values = np.array([outcome.summary["initial_joint_objective"]] + [t.joint_objective for t in outcome.traces])
    worst_step = float(np.max(np.diff(values)))
    gap = values[:31] - values[-1]
    keep = gap > 1e-12 * abs(values[-1])
    slope = float(np.polyfit(np.arange(31)[keep], np.log(gap[keep]), 1)[0]) if keep.sum() >= 5 else 0.0
    ok = worst_step <= 1e-9 and slope <= -0.05
    verdict(5, ok, f"largest per-round increase {worst_step:.2e}; log-gap slope {slope:.3f}/round over {int(keep.sum())} points")


def _unique_mean(S, rounds=500, N=100, K=60):
    rng = np.random.default_rng(S)
    counts = np.array([len(select_clients(np.full((S, N), 1 / N), K, rng, replace=False).unique_clients) for _ in range(rounds)])
    return counts.mean(), counts.std(ddof=1) / math.sqrt(rounds), N * (1 - (1 - K / N) ** S)


def test_criterion_6_selection_count():
    parts, ok = [], True
    for S in (2, 3):
        mean, se, expected = _unique_mean(S)
        ok &= abs(mean - expected) <= 3 * se
        parts.append(f"S={S}: {mean:.3f} vs {expected:.3f} (se {se:.3f})")
    assert _unique_mean(2)[2] == pytest.approx(2 * 60 - 60**2 / 100)
    verdict(6, ok, "; ".join(parts))


def test_criterion_7_aggregation_unbiasedness():
    N, S, K, dim, draws = 100, 2, 60, 50, 10_000
    rng = np.random.default_rng(7)
    w = rng.standard_normal((N, dim)) * rng.uniform(0.5, 3.0, (N, 1))
    u = np.maximum(rng.dirichlet(np.ones(S), N), 1e-4)
    n = rng.integers(100, 201, N)
    v = np.array([aggregation_weights(u, n, np.arange(N), s) for s in range(S)])
    samples = np.empty((draws, S, dim))
    for i in range(draws):
        sel = select_clients(v, K, rng)
        samples[i] = aggregate_centers([w[list(ids)] for ids in sel.per_cluster], K)
    se = samples.std(axis=0, ddof=1) / math.sqrt(draws)
    within = np.abs(samples.mean(axis=0) - v @ w) <= 3 * se
    verdict(7, within.mean() >= 0.99, f"{int(within.sum())}/{within.size} coordinates within 3 standard errors")


def _oracle_instances(count=100):
    model = LossModel(LINEAR_REGRESSION, 10)
    for i in range(count):
        config = ExperimentConfig(N=2, K=2, holdout_size=10, seeds=Seeds(1000 + i, 0, 0))
        data = generate_federation(config, 10.0, PartitionPattern.parse("random"))
        rng = np.random.default_rng(i)
        centers = data.cluster_params + rng.standard_normal(data.cluster_params.shape)
        yield ProximalProblem(data.clients[0].view(), centers, data.true_mixture[0], 1.0, model), rng


def test_criterion_8_solver_oracle_equivalence():
    budget = SolverConfig("gradient_iterative", local_epochs=10, batch_size=10, step_size=5e-3, adaptive=False)
    close, probes_ok, probes = 0, 0, 0
    for prob, rng in _oracle_instances():
        exact = proximal_value(prob, solve_closed_form(prob))
        approx = proximal_value(prob, solve_iterative(prob, budget, rng))
        close += (approx - exact) <= 0.01 * abs(exact)
        w, u = rng.standard_normal(10), rng.standard_normal(10)
        fd = central_difference(lambda x: proximal_value(prob, x), w, u)
        an = float(proximal_gradient(prob, w) @ u)
        probes += 1
        probes_ok += abs(fd - an) <= 1e-4 * max(abs(an), 1e-12)
    verdict(8, close >= 95 and probes_ok == probes, f"{close}/100 iterative solves within 1%; {probes_ok}/{probes} gradient probes within 1e-4")


def test_criterion_9_baseline_comparison():
    base = {"partition": "random", "sigma0": 10.0, **ADAM}
    means = {}
    workload_ok = True
    for algorithm in ("fedsoft", "ifca", "fedem"):
        losses = []
        for seed in SEEDS:
            traces = _run(seed, {**base, "algorithm": algorithm})[0].traces
            losses.append(traces[-1].mean_local_loss)
            per_client = 2 if algorithm == "fedem" else 1
            workload_ok &= all(t.local_solves == per_client * t.participants and t.participants > 0 for t in traces)
        means[algorithm] = float(np.mean(losses))
    ok = means["fedsoft"] <= means["ifca"] and workload_ok
    detail = ", ".join(f"{k} {v:.4g}" for k, v in means.items())
    verdict(9, ok, f"seed-averaged local MSE {detail}; solves per participant fedem 2, fedsoft 1: {workload_ok}")


def test_criterion_10_determinism():
    cases = [(0, TABLE1), (1, {"partition": "random", "algorithm": "fedem", **ADAM}), (2, {"partition": "random", **ADAM}), (0, {"algorithm": "theorem5", "T": 100})]
    same = 0
    for seed, values in cases:
        spec = spec_for(seed, **values)
        first = trace_csv(execute(spec).traces, spec["S"]).encode()
        second = trace_csv(execute(spec).traces, spec["S"]).encode()
        same += first == second
    verdict(10, same == len(cases), f"{same}/{len(cases)} repeated runs byte-identical (fedsoft closed form, fedem and fedsoft Adam, joint harness)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
