from __future__ import annotations

import numpy as np
import pytest

from conftest import random_shard
from softfl.core import ConfigurationError, ExperimentConfig, Seeds, Shard
from softfl.datagen import PartitionPattern, generate_cluster_params, generate_federation
from softfl.metrics import (
    Evaluator,
    association,
    best_center_loss,
    center_alignment,
    cluster_divergence,
    diagonal_dominates,
    holdout_matrix,
    importance_error,
    joint_objective,
    run_joint_convergence,
    weighted_center_update,
)
from softfl.models import LINEAR_REGRESSION, LossModel, batch_risk


def test_single_cluster_holdout_matrix(rng, linear5):
    shard = random_shard(rng, 30, 5)
    w = rng.standard_normal(5)
    m = holdout_matrix(w[None, :], [shard], linear5)
    assert m.shape == (1, 1) and m[0, 0] == batch_risk(linear5, w, shard)


def test_holdout_matrix_at_truth_matches_expectation():
    config = ExperimentConfig(S=3, N=2, holdout_size=40_000, seeds=Seeds(data_seed=6))
    data = generate_federation(config, 1.0, PartitionPattern.parse("random"))
    theta = data.cluster_params
    m = holdout_matrix(theta, [h.view() for h in data.holdouts], LossModel(LINEAR_REGRESSION, config.d))
    # E[(<x, theta_i - theta_s> + eps)^2] = ||theta_i - theta_s||^2 + 1
    expected = 1.0 + np.sum((theta[:, None, :] - theta[None, :, :]) ** 2, axis=2)
    np.testing.assert_allclose(m, expected, rtol=0.05)


def test_permuting_centers_permutes_columns(rng, linear5):
    holdouts = [random_shard(rng, 20, 5) for _ in range(3)]
    centers = rng.standard_normal((3, 5))
    perm = [2, 0, 1]
    np.testing.assert_array_equal(holdout_matrix(centers[perm], holdouts, linear5), holdout_matrix(centers, holdouts, linear5)[:, perm])


def test_association_examples():
    assert association(np.array([[1.0, 5.0], [4.0, 2.0]])).mapping == (0, 1)
    table = association(np.array([[68.4, 29.5], [21.8, 58.6]]))
    assert table.mapping == (1, 0) and table.distinct
    assert table.as_dict() == {"0": 1, "1": 0}
    flat = association(np.full((3, 3), 2.0))
    assert flat.mapping == (0, 0, 0) and not flat.distinct


def test_diagonal_dominance_and_alignment():
    assert diagonal_dominates(np.array([[68.4, 29.5], [21.8, 58.6]]))
    assert not diagonal_dominates(np.array([[1.0, 2.0], [1.0, 3.0]]))
    assert not diagonal_dominates(np.array([[1.0, 1.0], [2.0, 1.0]]))
    assert center_alignment(np.array([[1.0, 2.0], [1.0, 3.0]])) == (1, 0)


def test_importance_error_examples():
    truth = np.array([[0.1, 0.9], [0.9, 0.1]])
    assert importance_error(truth, truth) == 0.0
    assert importance_error(np.full((2, 2), 0.5), np.array([[0.1, 0.9], [0.1, 0.9]])) == pytest.approx(0.8)
    assert importance_error(truth[:, ::-1], truth, alignment=(1, 0)) == 0.0


def test_divergence_examples(rng):
    v = rng.standard_normal(4)
    assert cluster_divergence(np.array([v, v])) == (0.0, 0.0)
    lo, hi = cluster_divergence(rng.standard_normal((2, 4)))
    assert lo == hi
    with pytest.raises(ConfigurationError):
        cluster_divergence(v[None, :])


def test_divergence_ordering(rng):
    for _ in range(50):
        lo, hi = cluster_divergence(rng.standard_normal((4, 3)))
        assert lo < hi
    simplex = np.eye(3)
    lo, hi = cluster_divergence(simplex)
    assert lo == pytest.approx(hi)


def test_squared_divergence_expectation():
    # theta_i - theta_j ~ N(0, 2 sigma0^2 I): E||.||^2 = 2 d sigma0^2 = 2000, Var = 2 d (2 sigma0^2)^2
    sq = np.array([cluster_divergence(generate_cluster_params(2, 10, 10.0, seed))[1] ** 2 for seed in range(400)])
    se = np.sqrt(2 * 10 * (2 * 100.0) ** 2 / sq.size)
    assert abs(sq.mean() - 2000.0) < 3 * se


def test_best_center_loss():
    assert best_center_loss(np.array([[3.0, 1.0], [2.0, 5.0]])) == 1.5


def _joint_setup(rng, N=6, S=2, d=4):
    shards = [random_shard(rng, 15, d) for _ in range(N)]
    return shards, rng.standard_normal((N, d)), rng.standard_normal((S, d)), rng.dirichlet(np.ones(S), N)


def test_joint_objective_without_coupling(rng):
    model = LossModel(LINEAR_REGRESSION, 4)
    shards, w, c, u = _joint_setup(rng)
    expected = sum(batch_risk(model, w[k], s) for k, s in enumerate(shards))
    assert joint_objective(shards, w, c, u, 0.0, model) == pytest.approx(expected, rel=1e-13)


def test_joint_objective_order_invariant(rng):
    model = LossModel(LINEAR_REGRESSION, 4)
    shards, w, c, u = _joint_setup(rng)
    perm = rng.permutation(len(shards))
    a = joint_objective(shards, w, c, u, 1.0, model)
    b = joint_objective([shards[k] for k in perm], w[perm], c, u[perm], 1.0, model)
    assert a == pytest.approx(b, rel=1e-13)


def test_weighted_center_update_minimizes_center_block(rng):
    model = LossModel(LINEAR_REGRESSION, 4)
    shards, w, c, u = _joint_setup(rng)
    best = weighted_center_update(w, u)
    base = joint_objective(shards, w, best, u, 1.0, model)
    assert base <= joint_objective(shards, w, c, u, 1.0, model)
    for _ in range(30):
        assert base <= joint_objective(shards, w, best + 1e-3 * rng.standard_normal(best.shape), u, 1.0, model)


def test_block_coordinate_descent_is_monotone():
    for seed in range(3):
        config = ExperimentConfig(N=15, K=5, T=25, holdout_size=50, seeds=Seeds(seed, seed + 1, seed + 2))
        data = generate_federation(config, 10.0, PartitionPattern.parse("random"))
        run = run_joint_convergence(config, data, LossModel(LINEAR_REGRESSION, config.d))
        values = np.concatenate([[run.initial_objective], run.objectives])
        assert np.max(np.diff(values)) <= 1e-9


def test_trace_importance_error_ignores_center_labels(small_federation):
    config, data = small_federation
    model = LossModel(LINEAR_REGRESSION, config.d)
    evaluator = Evaluator(data, model)
    centers = data.cluster_params
    local = np.zeros((config.N, model.dim))
    a = evaluator.trace(0, centers, local, data.true_mixture, unique_selected=0)
    b = evaluator.trace(0, centers[::-1], local, data.true_mixture[:, ::-1], unique_selected=0)
    assert a.importance_error == 0.0 and b.importance_error == 0.0
