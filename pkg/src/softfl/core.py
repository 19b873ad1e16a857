"""Domain types shared across the simulator.

Models are plain ``float64`` numpy vectors; a set of centers is an ``(S, d)``
array.  Ground-truth source labels live on :class:`FederationDataset` only,
so the algorithm code sees shards as ``(x, y)`` pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class ConfigurationError(ValueError):
    """Invalid experiment or generator configuration."""


class ContractViolation(ValueError):
    """A caller broke a documented precondition (shape, emptiness, ...)."""


class DegenerateProblemError(ArithmeticError):
    """A linear system that should be solved exactly is singular."""


class SolverDivergenceError(ArithmeticError):
    """An iterative solve produced a non-finite iterate."""

    def __init__(self, message: str, last_finite: np.ndarray, round_index: int | None = None):
        super().__init__(message)
        self.last_finite = last_finite
        self.round_index = round_index


def as_model(values, d: int | None = None) -> np.ndarray:
    """Coerce ``values`` into a finite 1-D float64 model vector."""
    w = np.asarray(values, dtype=np.float64)
    if w.ndim != 1:
        raise ContractViolation(f"model vector must be 1-D, got shape {w.shape}")
    if d is not None and w.shape[0] != d:
        raise ContractViolation(f"model vector has dimension {w.shape[0]}, expected {d}")
    if not np.all(np.isfinite(w)):
        raise ContractViolation("model vector has non-finite entries")
    return w


def as_centers(values) -> np.ndarray:
    c = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if c.ndim != 2 or c.shape[0] < 1:
        raise ContractViolation(f"centers must be an (S, d) array with S >= 1, got {c.shape}")
    return c


@dataclass(frozen=True)
class LabeledPoint:
    x: np.ndarray
    y: float | int
    source: int = -1


@dataclass(frozen=True)
class Shard:
    """A client's local data as the algorithm sees it (no source labels)."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.shape[0] != self.x.shape[0]:
            raise ContractViolation(f"inconsistent shard shapes {self.x.shape} / {self.y.shape}")


@dataclass(frozen=True)
class LabeledData:
    """Points with their true source cluster; only metrics may read ``source``."""

    x: np.ndarray
    y: np.ndarray
    source: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def view(self) -> Shard:
        return Shard(self.x, self.y)

    def point(self, i: int) -> LabeledPoint:
        return LabeledPoint(self.x[i], self.y[i].item(), int(self.source[i]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "source": self.source.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], classification: bool = False) -> "LabeledData":
        x = np.asarray(data["x"], dtype=np.float64)
        y_dtype = np.int64 if classification else np.float64
        return cls(
            x=x.reshape(len(data["x"]), -1),
            y=np.asarray(data["y"], dtype=y_dtype),
            source=np.asarray(data["source"], dtype=np.int64),
        )


@dataclass
class ClientState:
    id: int
    shard: Shard
    local_model: np.ndarray
    importance: np.ndarray
    match_counts: np.ndarray
    last_estimated_round: int = -1
    never_selected: bool = True

    @property
    def n(self) -> int:
        return len(self.shard)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "x": self.shard.x.tolist(),
            "y": self.shard.y.tolist(),
            "y_dtype": str(self.shard.y.dtype),
            "local_model": self.local_model.tolist(),
            "importance": self.importance.tolist(),
            "match_counts": self.match_counts.tolist(),
            "last_estimated_round": self.last_estimated_round,
            "never_selected": self.never_selected,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ClientState":
        x = np.asarray(data["x"], dtype=np.float64).reshape(len(data["x"]), -1)
        return cls(
            id=int(data["id"]),
            shard=Shard(x, np.asarray(data["y"], dtype=np.dtype(data["y_dtype"]))),
            local_model=np.asarray(data["local_model"], dtype=np.float64),
            importance=np.asarray(data["importance"], dtype=np.float64),
            match_counts=np.asarray(data["match_counts"], dtype=np.int64),
            last_estimated_round=int(data["last_estimated_round"]),
            never_selected=bool(data["never_selected"]),
        )


@dataclass
class FederationDataset:
    clients: list[LabeledData]
    holdouts: list[LabeledData]
    true_mixture: np.ndarray
    generator_spec: dict[str, Any]
    cluster_params: np.ndarray | None = None

    @property
    def S(self) -> int:
        return self.true_mixture.shape[1]

    @property
    def N(self) -> int:
        return len(self.clients)

    @property
    def d_in(self) -> int:
        return self.clients[0].x.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.generator_spec.get("task") == "classification"

    def shard_sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.clients], dtype=np.int64)


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "closed_form"
    local_epochs: int = 10
    batch_size: int = 10
    step_size: float = 5e-3
    adaptive: bool = True

    def __post_init__(self):
        if self.kind not in ("closed_form", "gradient_iterative"):
            raise ConfigurationError(f"solver kind must be closed_form or gradient_iterative, got {self.kind!r}")
        if self.local_epochs < 0:
            raise ConfigurationError("local_epochs >= 0 required")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size >= 1 required")
        if not self.step_size > 0:
            raise ConfigurationError("step_size > 0 required")


@dataclass(frozen=True)
class Seeds:
    data_seed: int = 0
    init_seed: int = 1
    selection_seed: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    S: int = 2
    N: int = 100
    K: int = 60
    tau: int = 2
    sigma: float = 1e-4
    lam: float = 1.0
    T: int = 50
    solver: SolverConfig = field(default_factory=SolverConfig)
    seeds: Seeds = field(default_factory=Seeds)
    holdout_size: int = 1000
    d: int = 10
    noise_std: float = 1.0
    selection_replacement: bool = True

    def __post_init__(self):
        if self.S < 1:
            raise ConfigurationError("S >= 1 required")
        if self.N < 1:
            raise ConfigurationError("N >= 1 required")
        if self.K < 1:
            raise ConfigurationError("K >= 1 required")
        if self.tau < 1:
            raise ConfigurationError("τ ≥ 1 required (tau)")
        if not 0 < self.sigma < 1:
            raise ConfigurationError("0 < σ < 1 required (sigma)")
        if self.lam < 0:
            raise ConfigurationError("λ ≥ 0 required (lambda)")
        if self.T < 1:
            raise ConfigurationError("T ≥ 1 required")
        if self.holdout_size < 1:
            raise ConfigurationError("holdout_size >= 1 required")
        if self.d < 1:
            raise ConfigurationError("d >= 1 required")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std >= 0 required")
        if not self.selection_replacement and self.K > self.N:
            raise ConfigurationError("K <= N required when sampling without replacement")


@dataclass
class RoundTrace:
    round: int
    holdout_losses: np.ndarray
    mean_local_loss: float
    importance_error: float
    unique_selected: int
    joint_objective: float | None = None
    participants: int = 0
    local_solves: int = 0
    broadcast_values: int = 0

    def __post_init__(self):
        losses = np.asarray(self.holdout_losses)
        if not (np.all(np.isfinite(losses)) and np.all(losses >= 0)):
            raise ContractViolation(f"round {self.round}: holdout losses must be finite and >= 0")
        if not (np.isfinite(self.mean_local_loss) and self.mean_local_loss >= 0):
            raise ContractViolation(f"round {self.round}: mean local loss must be finite and >= 0")
