from __future__ import annotations

import numpy as np
import pytest

from softfl.core import ExperimentConfig, Seeds, Shard
from softfl.datagen import PartitionPattern, generate_federation
from softfl.models import LINEAR_REGRESSION, LossModel


def random_shard(rng: np.random.Generator, n: int = 40, d: int = 5) -> Shard:
    return Shard(rng.standard_normal((n, d)), rng.standard_normal(n))


def central_difference(f, w, direction, h=1e-5):
    return (f(w + h * direction) - f(w - h * direction)) / (2 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def linear5():
    return LossModel(LINEAR_REGRESSION, 5)


@pytest.fixture(scope="session")
def small_federation():
    config = ExperimentConfig(N=20, K=10, T=6, holdout_size=200, seeds=Seeds(5, 6, 7))
    return config, generate_federation(config, 10.0, PartitionPattern.parse("10:90"))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
