"""Execute resolved run specs and write their CSV traces and JSON summaries."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import run_baseline
from .config import SEED_KEYS, ParsedConfig, RunSpec
from .core import DegenerateProblemError, FederationDataset, RoundTrace, SolverDivergenceError
from .datagen import generate_classification_federation, generate_federation
from .fedsoft import run_experiment
from .metrics import accuracy_matrix, association, cluster_divergence, run_joint_convergence
from .models import model_for

log = logging.getLogger(__name__)


def build_dataset(spec: RunSpec) -> FederationDataset:
    config = spec.experiment()
    if spec["task"] == "classification":
        return generate_classification_federation(config, spec.partition, spec["class_count"], spec["separation"], spec.n_range)
    return generate_federation(config, spec["sigma0"], spec.partition, spec.n_range)


@dataclass
class RunOutcome:
    spec: RunSpec
    traces: list[RoundTrace]
    summary: dict[str, Any]
    centers: np.ndarray | None = None
    local_models: np.ndarray | None = None
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.summary["status"] == "ok"


def _finite_or_none(x: float) -> float | None:
    return float(x) if np.isfinite(x) else None


def _divergence(vectors) -> list[float] | None:
    if vectors is None or len(vectors) < 2:
        return None
    return list(cluster_divergence(vectors))


def execute(spec: RunSpec, dataset: FederationDataset | None = None) -> RunOutcome:
    """Run one spec end to end.  Solver failures are captured in the summary."""
    dataset = dataset if dataset is not None else build_dataset(spec)
    config = spec.experiment()
    model = model_for(dataset)
    status, message = "ok", None
    centers = local_models = None
    extras: dict[str, Any] = {}
    try:
        if spec.algorithm == "fedsoft":
            result = run_experiment(config, dataset, model)
            traces, centers, local_models = result.traces, result.centers, result.local_models
            extras["never_selected"] = result.never_selected
        elif spec.algorithm == "theorem5":
            joint = run_joint_convergence(config, dataset, model)
            traces, centers, local_models = joint.traces, joint.centers, joint.local_models
            extras["initial_joint_objective"] = joint.initial_objective
        else:
            result = run_baseline(spec.algorithm, config, dataset, model)
            traces, centers, local_models = result.traces, result.centers, result.local_models
    except (SolverDivergenceError, DegenerateProblemError) as exc:
        traces = list(getattr(exc, "partial_traces", []))
        status = "solver_divergence" if isinstance(exc, SolverDivergenceError) else "degenerate_problem"
        message = f"round {getattr(exc, 'round_index', None)}: {exc}"
        log.warning("run failed: %s", message)

    summary: dict[str, Any] = {
        "algorithm": spec.algorithm,
        "config": spec.to_dict(),
        "seeds": {k: spec[k] for k in SEED_KEYS},
        "status": status,
        "error": message,
        "rounds_completed": len(traces),
        "true_mixture_divergence": _divergence(dataset.cluster_params),
    }
    if traces:
        last = traces[-1]
        matrix = last.holdout_losses
        assoc = association(matrix)
        summary.update(
            final_holdout_matrix=matrix.tolist(),
            association={"mapping": list(assoc.mapping), "distinct": assoc.distinct},
            final_mean_local_loss=last.mean_local_loss,
            final_importance_error=last.importance_error,
        )
    if centers is not None:
        summary["center_divergence"] = _divergence(centers)
        if dataset.is_classification:
            summary["final_accuracy_matrix"] = accuracy_matrix(centers, [h.view() for h in dataset.holdouts], model).tolist()
    if "never_selected" in extras:
        summary["never_selected"] = extras["never_selected"]
    if "initial_joint_objective" in extras:
        summary["initial_joint_objective"] = _finite_or_none(extras["initial_joint_objective"])
    return RunOutcome(spec, traces, summary, centers, local_models, extras)


def csv_header(S: int) -> list[str]:
    losses = [f"holdout_{i}_center_{s}" for i in range(S) for s in range(S)]
    return [
        "round",
        *losses,
        "mean_local_loss",
        "importance_error",
        "unique_selected",
        "joint_objective",
        "participants",
        "local_solves",
        "broadcast_values",
    ]


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def trace_csv(traces: list[RoundTrace], S: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(S))
    for t in traces:
        writer.writerow(
            [
                t.round,
                *(_num(v) for v in np.asarray(t.holdout_losses).ravel()),
                _num(t.mean_local_loss),
                _num(t.importance_error),
                t.unique_selected,
                _num(t.joint_objective),
                t.participants,
                t.local_solves,
                t.broadcast_values,
            ]
        )
    return buf.getvalue()


def read_trace_csv(path: str | Path) -> list[dict[str, float | None]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in csv.DictReader(fh)]


def summary_json(summary: dict[str, Any]) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_outputs(outcome: RunOutcome, out_dir: Path, figures: bool = False) -> dict[str, str]:
    S = outcome.spec["S"]
    paths = {"trace": out_dir / "trace.csv", "summary": out_dir / "summary.json"}
    atomic_write(paths["trace"], trace_csv(outcome.traces, S))
    atomic_write(paths["summary"], summary_json(outcome.summary))
    if figures and outcome.traces:
        from .plotting import render_run_figures

        paths.update(render_run_figures(outcome.traces, out_dir, S, title=outcome.spec.algorithm))
    return {k: str(v) for k, v in paths.items()}


def _run_one(args: tuple[str, RunSpec, str, bool]) -> dict[str, Any]:
    label, spec, out_dir, figures = args
    outcome = execute(spec)
    paths = write_outputs(outcome, Path(out_dir), figures)
    return {"label": label, "status": outcome.summary["status"], "outputs": paths, "config": spec.to_dict()}


def run_config(parsed: ParsedConfig, out_dir: Path, jobs: int = 1, figures: bool = False, **overrides) -> list[dict[str, Any]]:
    """Run every point of ``parsed``; sweeps get one subdirectory per point plus ``index.json``."""
    runs = parsed.runs(**overrides)
    if len(runs) == 1 and not parsed.sweep:
        label, spec = runs[0]
        return [_run_one((label, spec, str(out_dir), figures))]
    tasks = [(label, spec, str(out_dir / f"run_{i:03d}"), figures) for i, (label, spec) in enumerate(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_run_one, tasks))
    else:
        entries = [_run_one(task) for task in tasks]
    atomic_write(out_dir / "index.json", json.dumps({"sweep": list(parsed.sweep), "runs": entries}, indent=2) + "\n")
    return entries
