"""Flat key-value experiment configuration.

The file format is the flat subset of TOML: one ``key = value`` per line,
``#`` comments, strings in double quotes, ``true``/``false`` booleans.  No
tables.  A list value turns that key into a sweep axis, and several sweep
axes expand to their cartesian product in file order::

    algorithm = "fedsoft"
    partition = "random"
    sigma0 = [1, 10, 50, 100]
    data_seed = 3

Unknown keys and ill-typed values are rejected with the offending key named.
"""

from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import ConfigurationError, ExperimentConfig, Seeds, SolverConfig
from .datagen import PartitionPattern

ALGORITHMS = ("fedsoft", "ifca", "fedem", "theorem5")
TASKS = ("regression", "classification")

# key -> (type, default)
FIELDS: dict[str, tuple[type, Any]] = {
    "algorithm": (str, "fedsoft"),
    "task": (str, "regression"),
    "S": (int, 2),
    "N": (int, 100),
    "K": (int, 60),
    "tau": (int, 2),
    "sigma": (float, 1e-4),
    "lambda": (float, 1.0),
    "T": (int, 50),
    "sigma0": (float, 10.0),
    "partition": (str, "10:90"),
    "holdout_size": (int, 1000),
    "d": (int, 10),
    "noise_std": (float, 1.0),
    "n_min": (int, 100),
    "n_max": (int, 200),
    "solver": (str, "closed_form"),
    "local_epochs": (int, 10),
    "batch_size": (int, 10),
    "step_size": (float, 5e-3),
    "adaptive": (bool, True),
    "selection_replacement": (bool, True),
    "class_count": (int, 4),
    "separation": (float, 1.5707963267948966),
    "data_seed": (int, 0),
    "init_seed": (int, 1),
    "selection_seed": (int, 2),
}

SEED_KEYS = ("data_seed", "init_seed", "selection_seed")


def _coerce(key: str, value: Any) -> Any:
    kind = FIELDS[key][0]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigurationError(f"{key}: expected a string, got {value!r}")
    return value


@dataclass(frozen=True)
class RunSpec:
    """One fully resolved run: algorithm, data generator and algorithm knobs."""

    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def algorithm(self) -> str:
        return self.values["algorithm"]

    @property
    def partition(self) -> PartitionPattern:
        return PartitionPattern.parse(self.values["partition"])

    @property
    def n_range(self) -> tuple[int, int]:
        return self.values["n_min"], self.values["n_max"]

    def experiment(self) -> ExperimentConfig:
        v = self.values
        return ExperimentConfig(
            S=v["S"],
            N=v["N"],
            K=v["K"],
            tau=v["tau"],
            sigma=v["sigma"],
            lam=v["lambda"],
            T=v["T"],
            solver=SolverConfig(v["solver"], v["local_epochs"], v["batch_size"], v["step_size"], v["adaptive"]),
            seeds=Seeds(v["data_seed"], v["init_seed"], v["selection_seed"]),
            holdout_size=v["holdout_size"],
            d=v["d"],
            noise_std=v["noise_std"],
            selection_replacement=v["selection_replacement"],
        )

    def with_overrides(self, **overrides) -> "RunSpec":
        return build_spec({**self.values, **{k: v for k, v in overrides.items() if v is not None}})

    def to_dict(self) -> dict[str, Any]:
        return {key: self.values[key] for key in FIELDS}


def build_spec(values: dict[str, Any]) -> RunSpec:
    """Fill defaults, type-check, and validate cross-field constraints."""
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise ConfigurationError(f"unknown key(s): {', '.join(unknown)}")
    resolved = {key: _coerce(key, values[key]) if key in values else default for key, (_, default) in FIELDS.items()}
    if resolved["algorithm"] not in ALGORITHMS:
        raise ConfigurationError(f"algorithm: expected one of {', '.join(ALGORITHMS)}, got {resolved['algorithm']!r}")
    if resolved["task"] not in TASKS:
        raise ConfigurationError(f"task: expected one of {', '.join(TASKS)}, got {resolved['task']!r}")
    if not resolved["sigma0"] > 0:
        raise ConfigurationError("sigma0: must be positive")
    spec = RunSpec(resolved)
    spec.experiment()  # raises ConfigurationError on invalid knobs
    spec.partition.validate(resolved["N"], resolved["S"])
    if resolved["task"] == "classification" and resolved["solver"] == "closed_form":
        raise ConfigurationError("solver: closed_form needs the regression task")
    if resolved["algorithm"] == "theorem5" and resolved["task"] != "regression":
        raise ConfigurationError("algorithm: theorem5 needs the regression task")
    return spec


@dataclass(frozen=True)
class ParsedConfig:
    base: dict[str, Any]
    sweep: dict[str, list[Any]]

    def runs(self, **overrides) -> list[tuple[str, RunSpec]]:
        """Expand sweep axes; returns ``(label, spec)`` pairs in deterministic order."""
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if not self.sweep:
            return [("run", build_spec({**self.base, **overrides}))]
        keys = list(self.sweep)
        out = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            point = dict(zip(keys, combo))
            label = ",".join(f"{k}={v}" for k, v in point.items())
            out.append((label, build_spec({**self.base, **point, **overrides})))
        return out


def parse_config_text(text: str) -> ParsedConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    base, sweep = {}, {}
    for key, value in raw.items():
        if key not in FIELDS:
            raise ConfigurationError(f"unknown key(s): {key}")
        if isinstance(value, dict):
            raise ConfigurationError(f"{key}: tables are not allowed; the format is flat")
        if isinstance(value, list):
            if not value:
                raise ConfigurationError(f"{key}: sweep list is empty")
            sweep[key] = [_coerce(key, v) for v in value]
        else:
            base[key] = _coerce(key, value)
    parsed = ParsedConfig(base, sweep)
    parsed.runs()  # validate every sweep point up front
    return parsed


def parse_config(path: str | Path) -> ParsedConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def format_config(values: dict[str, Any]) -> str:
    """Render a resolved spec back into the config grammar (round-trips through the parser)."""
    lines = []
    for key in FIELDS:
        value = values[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
