"""Figure rendering for episode logs and batch reports."""

from __future__ import annotations

import math

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib import patches

from .engine import EpisodeLog, ScenarioConfig

AGENT_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def _draw_map(ax, grid):
    x0, x1, y0, y1 = grid.world_extent()
    ax.imshow(np.where(grid.cells, 0.25, 1.0), cmap="gray", vmin=0.0, vmax=1.0,
              extent=(x0, x1, y0, y1), origin="lower", interpolation="nearest")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")


def _vessel_patch(x, y, heading, length, width, color, alpha):
    rect = patches.Rectangle((-length / 2, -width / 2), length, width,
                             facecolor=color, edgecolor="black",
                             linewidth=0.4, alpha=alpha)
    transform = (matplotlib.transforms.Affine2D()
                 .rotate(heading).translate(x, y))
    rect.set_transform(transform)
    return rect, transform


def plot_episode(log: EpisodeLog, scenario: ScenarioConfig, out_path,
                 snapshot_every_s: float = 5.0, title: str | None = None) -> None:
    """Trajectories over the map with to-scale hulls drawn periodically."""
    fig, ax = plt.subplots(figsize=(9, 5))
    _draw_map(ax, scenario.grid)

    agent_ids = sorted(log.ticks[0].states) if log.ticks else []
    vessels = {a.id: scenario.vessel_of(a) for a in scenario.agents}
    stride = max(1, int(round(snapshot_every_s / scenario.control_period_s)))

    for idx, aid in enumerate(agent_ids):
        color = AGENT_COLORS[idx % len(AGENT_COLORS)]
        pos = np.array([rec.states[aid][:2] for rec in log.ticks])
        ax.plot(pos[:, 0], pos[:, 1], color=color, linewidth=1.2, label=aid)
        vp = vessels.get(aid)
        length, width = (vp.length, vp.width) if vp else (4.0, 1.8)
        for rec in log.ticks[::stride] + [log.ticks[-1]]:
            x, y, heading = rec.states[aid][:3]
            rect, tr = _vessel_patch(x, y, heading, length, width, color, 0.35)
            rect.set_transform(tr + ax.transData)
            ax.add_patch(rect)
        spec = next(a for a in scenario.agents if a.id == aid)
        ax.plot(*spec.goal, marker="*", color=color, markersize=12,
                markeredgecolor="black", linestyle="none")

    flagged = [rec for rec in log.ticks if rec.violations]
    for rec in flagged:
        for (i, j, kind) in rec.violations:
            ax.plot(rec.states[i][0], rec.states[i][1], "x", color="red",
                    markersize=4, alpha=0.6)
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def plot_batch_summary(aggregate: dict, out_path) -> None:
    """Outcome counts and completion-time spread per controller mode."""
    modes = sorted(aggregate)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))

    width = 0.25
    xs = np.arange(len(modes))
    for offset, (key, color) in enumerate((("successes", "#2a9d2a"),
                                           ("deadlocks", "#e0a000"),
                                           ("collisions", "#cc3333"))):
        ax1.bar(xs + (offset - 1) * width, [aggregate[m][key] for m in modes],
                width, label=key, color=color)
    ax1.set_xticks(xs)
    ax1.set_xticklabels(modes, rotation=15)
    ax1.set_ylabel("runs")
    ax1.legend(fontsize=8)
    ax1.set_title("outcomes")

    times = [aggregate[m]["times_s"] for m in modes]
    if any(len(t) for t in times):
        ax2.boxplot([t or [float("nan")] for t in times], tick_labels=modes)
    ax2.set_ylabel("completion time [s]")
    ax2.set_title("successful-run times")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def plot_benchmark(results: list, out_path) -> None:
    """Mean plan-call wall time against the number of agents."""
    fig, ax = plt.subplots(figsize=(5, 4))
    agents = [r["agents"] for r in results]
    means = [r["mean_ms"] for r in results]
    stds = [r["std_ms"] for r in results]
    ax.errorbar(agents, means, yerr=stds, marker="o", capsize=4)
    ax.set_xlabel("number of agents")
    ax.set_ylabel("plan call wall time [ms]")
    ax.set_xticks(agents)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
