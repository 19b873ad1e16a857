"""Synthetic soft-clustered federations.

Regression data follows ``y = <x, theta_s> + eps`` with ``x ~ N(0, I_d)`` and
``theta_s ~ N(0, sigma0^2 I_d)``.  Each client draws ``n_k`` uniformly from
``[n_min, n_max]`` and splits it across sources by largest-remainder rounding
of its mixture vector, so per-client counts always add up to ``n_k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigurationError, ExperimentConfig, FederationDataset, LabeledData

FIXED_RATIO = "fixed_ratio"
LINEAR = "linear"
RANDOM = "random"


@dataclass(frozen=True)
class PartitionPattern:
    kind: str
    a: int = 10
    b: int = 90

    def __post_init__(self):
        if self.kind not in (FIXED_RATIO, LINEAR, RANDOM):
            raise ConfigurationError(f"unknown partition pattern {self.kind!r}")
        if self.kind == FIXED_RATIO and (self.a + self.b != 100 or self.a < 0 or self.b < 0):
            raise ConfigurationError(f"fixed ratio needs a + b = 100, got {self.a}:{self.b}")

    @classmethod
    def parse(cls, text: str) -> "PartitionPattern":
        """Accepts ``"10:90"``, ``"30:70"``, ``"linear"`` or ``"random"``."""
        text = text.strip().lower()
        if text in (LINEAR, RANDOM):
            return cls(text)
        try:
            a, b = (int(part) for part in text.split(":"))
        except ValueError:
            raise ConfigurationError(f"cannot parse partition {text!r}") from None
        return cls(FIXED_RATIO, a, b)

    def label(self) -> str:
        return f"{self.a}:{self.b}" if self.kind == FIXED_RATIO else self.kind

    def validate(self, N: int, S: int) -> None:
        if self.kind == LINEAR and (N != 100 or S != 2):
            raise ConfigurationError("linear partition is defined only for N = 100 and S = 2")
        if self.kind == FIXED_RATIO and S != 2:
            raise ConfigurationError("fixed-ratio partitions are defined only for S = 2")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_cluster_params(S: int, d: int, sigma0: float, seed) -> np.ndarray:
    """``(S, d)`` array of regression parameters, one row per cluster."""
    if S < 1 or d < 1:
        raise ConfigurationError(f"need S >= 1 and d >= 1, got S={S}, d={d}")
    if not sigma0 > 0:
        raise ConfigurationError(f"sigma0 must be positive, got {sigma0}")
    return sigma0 * _rng(seed).standard_normal((S, d))


def mixture_for_client(k: int, N: int, pattern: PartitionPattern, rng, S: int = 2) -> np.ndarray:
    pattern.validate(N, S)
    if pattern.kind == FIXED_RATIO:
        first = pattern.a / 100 if k < N // 2 else pattern.b / 100
        return np.array([first, 1.0 - first])
    if pattern.kind == LINEAR:
        return np.array([(0.5 + k) / 100, (99.5 - k) / 100])
    cuts = np.sort(_rng(rng).uniform(0.0, 1.0, S - 1))
    return np.diff(np.concatenate(([0.0], cuts, [1.0])))


def largest_remainder(mixture: np.ndarray, n: int) -> np.ndarray:
    """Integer counts summing to ``n`` that track ``n * mixture`` within one point."""
    quotas = np.asarray(mixture, dtype=np.float64) * n
    counts = np.floor(quotas).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        # stable sort keeps ties on the lowest index
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _regression_points(rng, theta: np.ndarray, sources: np.ndarray, noise_std: float) -> LabeledData:
    d = theta.shape[1]
    x = rng.standard_normal((len(sources), d))
    eps = noise_std * rng.standard_normal(len(sources)) if noise_std > 0 else np.zeros(len(sources))
    y = np.einsum("nd,nd->n", x, theta[sources]) + eps
    return LabeledData(x, y, sources)


def _client_layout(config: ExperimentConfig, pattern: PartitionPattern, rng, n_range) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-client shuffled source labels and the post-rounding mixture matrix."""
    pattern.validate(config.N, config.S)
    n_min, n_max = n_range
    sources, mixture = [], np.zeros((config.N, config.S))
    for k in range(config.N):
        n_k = int(rng.integers(n_min, n_max + 1))
        target = mixture_for_client(k, config.N, pattern, rng, config.S)
        counts = largest_remainder(target, n_k)
        mixture[k] = counts / n_k
        sources.append(rng.permutation(np.repeat(np.arange(config.S), counts)))
    return sources, mixture


def generate_federation(
    config: ExperimentConfig,
    sigma0: float,
    pattern: PartitionPattern,
    n_range: tuple[int, int] = (100, 200),
) -> FederationDataset:
    """Mixture-of-linear-regressions federation seeded by ``config.seeds.data_seed``."""
    if n_range[0] < 1 or n_range[1] < n_range[0]:
        raise ConfigurationError(f"invalid shard size range {n_range}")
    param_seq, client_seq, holdout_seq = np.random.SeedSequence(config.seeds.data_seed).spawn(3)
    theta = generate_cluster_params(config.S, config.d, sigma0, np.random.default_rng(param_seq))

    rng = np.random.default_rng(client_seq)
    sources, mixture = _client_layout(config, pattern, rng, n_range)
    clients = [_regression_points(rng, theta, src, config.noise_std) for src in sources]

    hold_rng = np.random.default_rng(holdout_seq)
    holdouts = [
        _regression_points(hold_rng, theta, np.full(config.holdout_size, s, dtype=np.int64), config.noise_std)
        for s in range(config.S)
    ]
    spec = {
        "task": "regression",
        "S": config.S,
        "N": config.N,
        "d": config.d,
        "sigma0": sigma0,
        "noise_std": config.noise_std,
        "pattern": pattern.label(),
        "seed": config.seeds.data_seed,
        "holdout_size": config.holdout_size,
        "n_range": list(n_range),
    }
    return FederationDataset(clients, holdouts, mixture, spec, theta)


def _rotation(d: int, angle: float) -> np.ndarray:
    """Rotate coordinate ``i`` into ``i + d//2`` by ``angle`` for every pair."""
    half = d // 2
    R = np.eye(d)
    c, s = math.cos(angle), math.sin(angle)
    for i in range(half):
        j = i + half
        R[i, i], R[j, j] = c, c
        R[j, i], R[i, j] = s, -s
    return R


def class_means(S: int, d: int, class_count: int, separation: float, rng, scale: float = 3.0) -> np.ndarray:
    """``(S, C, d)`` class means; cluster ``s`` is the base layout rotated by ``s * separation``.

    Base means occupy the first ``d // 2`` coordinates, so a rotation of
    ``pi / 2`` moves all class information into the complementary subspace.
    """
    base = np.zeros((class_count, d))
    base[:, : max(d // 2, 1)] = scale * rng.standard_normal((class_count, max(d // 2, 1)))
    return np.stack([base @ _rotation(d, s * separation).T for s in range(S)])


def _classification_points(rng, means: np.ndarray, sources: np.ndarray) -> LabeledData:
    C, d = means.shape[1:]
    y = rng.integers(0, C, len(sources))
    x = means[sources, y] + rng.standard_normal((len(sources), d))
    return LabeledData(x, y.astype(np.int64), sources)


def generate_classification_federation(
    config: ExperimentConfig,
    pattern: PartitionPattern,
    class_count: int,
    separation: float,
    n_range: tuple[int, int] = (100, 200),
) -> FederationDataset:
    """Gaussian class-conditional federation; ``separation`` is a rotation angle in radians."""
    if class_count < 2:
        raise ConfigurationError("class_count >= 2 required")
    if not separation > 0:
        raise ConfigurationError("separation must be positive")
    if config.d < 2:
        raise ConfigurationError("classification data needs d >= 2")
    param_seq, client_seq, holdout_seq = np.random.SeedSequence(config.seeds.data_seed).spawn(3)
    means = class_means(config.S, config.d, class_count, separation, np.random.default_rng(param_seq))

    rng = np.random.default_rng(client_seq)
    sources, mixture = _client_layout(config, pattern, rng, n_range)
    clients = [_classification_points(rng, means, src) for src in sources]

    hold_rng = np.random.default_rng(holdout_seq)
    holdouts = [
        _classification_points(hold_rng, means, np.full(config.holdout_size, s, dtype=np.int64))
        for s in range(config.S)
    ]
    spec = {
        "task": "classification",
        "S": config.S,
        "N": config.N,
        "d": config.d,
        "class_count": class_count,
        "separation": separation,
        "pattern": pattern.label(),
        "seed": config.seeds.data_seed,
        "holdout_size": config.holdout_size,
        "n_range": list(n_range),
    }
    return FederationDataset(clients, holdouts, mixture, spec, means)


def dataset_to_dict(dataset: FederationDataset) -> dict:
    return {
        "format": "softfl-federation/1",
        "generator_spec": dataset.generator_spec,
        "true_mixture": dataset.true_mixture.tolist(),
        "cluster_params": None if dataset.cluster_params is None else dataset.cluster_params.tolist(),
        "clients": [c.to_dict() for c in dataset.clients],
        "holdouts": [h.to_dict() for h in dataset.holdouts],
    }


def dataset_from_dict(data: dict) -> FederationDataset:
    if data.get("format") != "softfl-federation/1":
        raise ConfigurationError(f"unsupported dataset container {data.get('format')!r}")
    spec = data["generator_spec"]
    classification = spec.get("task") == "classification"
    params = data.get("cluster_params")
    return FederationDataset(
        clients=[LabeledData.from_dict(c, classification) for c in data["clients"]],
        holdouts=[LabeledData.from_dict(h, classification) for h in data["holdouts"]],
        true_mixture=np.asarray(data["true_mixture"], dtype=np.float64),
        generator_spec=spec,
        cluster_params=None if params is None else np.asarray(params, dtype=np.float64),
    )


def save_dataset(dataset: FederationDataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(dataset)), encoding="utf-8")


def load_dataset(path: str | Path) -> FederationDataset:
    return dataset_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
