"""Figures rendered next to a run's CSV trace.

Uses the object-oriented matplotlib API with the Agg canvas so nothing
depends on an interactive backend.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .core import RoundTrace

FIG_WIDTH = 6.4
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _new_figure(ncols: int = 1) -> Figure:
    fig = Figure(figsize=(FIG_WIDTH * max(ncols, 1) / 1.4, FIG_WIDTH * GOLDEN))
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def holdout_figure(traces: list[RoundTrace], S: int) -> Figure:
    """One panel per holdout distribution, one line per center."""
    rounds = [t.round for t in traces]
    losses = np.array([t.holdout_losses for t in traces])
    fig = _new_figure(S)
    for i in range(S):
        ax = fig.add_subplot(1, S, i + 1)
        for s in range(S):
            ax.plot(rounds, losses[:, i, s], label=f"center {s}")
        ax.set_yscale("log")
        ax.set_xlabel("round")
        ax.set_title(f"holdout {i}")
        if i == 0:
            ax.set_ylabel("holdout loss")
    fig.axes[-1].legend(frameon=False, fontsize=8)
    return fig


def importance_figure(traces: list[RoundTrace]) -> Figure:
    fig = _new_figure()
    ax = fig.add_subplot(1, 1, 1)
    ax.plot([t.round for t in traces], [t.importance_error for t in traces], color="k")
    ax.set_xlabel("round")
    ax.set_ylabel("mean L1 importance error")
    return fig


def objective_figure(traces: list[RoundTrace]) -> Figure | None:
    values = np.array([t.joint_objective for t in traces if t.joint_objective is not None], dtype=float)
    if values.size < 2:
        return None
    gap = values - values[-1]
    keep = gap > 0
    fig = _new_figure()
    ax = fig.add_subplot(1, 1, 1)
    ax.semilogy(np.arange(values.size)[keep], gap[keep], marker=".", color="k")
    ax.set_xlabel("round")
    ax.set_ylabel("objective - final objective")
    return fig


def render_run_figures(traces: list[RoundTrace], out_dir: Path, S: int, title: str | None = None) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    fig = holdout_figure(traces, S)
    if title:
        fig.suptitle(title)
    paths["holdout_figure"] = _save(fig, out_dir / "holdout_losses.png")
    paths["importance_figure"] = _save(importance_figure(traces), out_dir / "importance_error.png")
    fig = objective_figure(traces)
    if fig is not None:
        paths["objective_figure"] = _save(fig, out_dir / "joint_objective.png")
    return paths
