"""Figure builders: training curves, sweep heatmap, demo trajectory.

Every builder returns (figure, info) where info describes what was drawn so
tests can assert on content without rasterizing. save_figure writes the file
deterministically (fixed style, no embedded timestamps).
"""
from __future__ import annotations

import os
import warnings

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import attach_release_events, read_heatmap, read_metrics, \
    read_trajectory, stage_transitions

plt.rcParams["svg.hashsalt"] = "forwarder-plots"
plt.rcParams["figure.dpi"] = 100


def save_figure(fig, out_path):
    ext = os.path.splitext(out_path)[1].lower()
    metadata = {"Date": None} if ext == ".svg" else None
    fig.savefig(out_path, metadata=metadata)
    plt.close(fig)
    return out_path


def plot_curves(csv_paths, out_path=None):
    """Overlay mean-return curves of several runs plus their average."""
    runs = [read_metrics(p) for p in csv_paths]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    series = []
    for path, rows in zip(csv_paths, runs):
        label = os.path.splitext(os.path.basename(path))[0]
        ax.plot([r["epoch"] for r in rows],
                [r["mean_return"] for r in rows],
                linewidth=1.0, alpha=0.7, label=label)
        series.append(label)

    min_len = min(len(rows) for rows in runs)
    mean = np.mean([[r["mean_return"] for r in rows[:min_len]]
                    for rows in runs], axis=0)
    ax.plot(runs[0][0]["epoch"] + np.arange(min_len), mean,
            "k--", linewidth=2.0, label="average")
    series.append("average")

    transitions = sorted({e for rows in runs for e in stage_transitions(rows)})
    for epoch in transitions:
        ax.axvline(epoch, color="gray", linestyle=":", linewidth=0.8)

    ax.set_xlabel("epoch")
    ax.set_ylabel("mean return")
    ax.legend(fontsize=8)
    fig.tight_layout()
    info = {"series": series, "transitions": transitions,
            "n_runs": len(runs)}
    if out_path:
        save_figure(fig, out_path)
    return fig, info


def plot_heatmap(csv_path, out_path=None):
    """Arrangement x weight grid of final returns with cell annotations."""
    arrangements, weights, values = read_heatmap(csv_path)
    grid = np.array([[np.nan if v is None else v for v in row]
                     for row in values])
    missing = [(arrangements[i], weights[j])
               for i in range(len(arrangements))
               for j in range(len(weights)) if values[i][j] is None]
    if missing:
        warnings.warn(f"heatmap has {len(missing)} missing cells: {missing}")

    fig, ax = plt.subplots(figsize=(1.6 * len(weights) + 2.5,
                                    0.8 * len(arrangements) + 1.5))
    masked = np.ma.masked_invalid(grid)
    ax.imshow(masked, cmap="viridis", aspect="auto")
    best = None
    if masked.count():
        i, j = np.unravel_index(np.nanargmax(grid), grid.shape)
        best = (arrangements[i], weights[j], float(grid[i, j]))
    for i in range(len(arrangements)):
        for j in range(len(weights)):
            if values[i][j] is None:
                ax.add_patch(plt.Rectangle((j - 0.5, i - 0.5), 1, 1,
                                           fill=False, hatch="///",
                                           edgecolor="red"))
                continue
            text = f"{values[i][j]:.1f}"
            if best and (arrangements[i], weights[j]) == best[:2]:
                text += " *"
            ax.text(j, i, text, ha="center", va="center", fontsize=8,
                    color="white")
    ax.set_xticks(range(len(weights)), [f"w={w:g}" for w in weights])
    ax.set_yticks(range(len(arrangements)), arrangements)
    fig.tight_layout()
    info = {"arrangements": arrangements, "weights": weights,
            "best": best, "missing": missing}
    if out_path:
        save_figure(fig, out_path)
    return fig, info


def plot_trajectory(jsonl_path, out_path=None):
    """Top-down grapple/log traces plus a z-vs-time panel with grasp events."""
    records = read_trajectory(jsonl_path)
    t = np.array([r["t"] for r in records])
    gb = np.array([r["gb_pos"] for r in records])
    log = np.array([r["log_pos"] for r in records])
    events = attach_release_events(records)

    fig, (ax_xy, ax_z) = plt.subplots(1, 2, figsize=(10, 4.5))
    ax_xy.plot(gb[:, 0], gb[:, 1], label="grapple body", linewidth=1.2)
    ax_xy.plot(log[:, 0], log[:, 1], label="log", linewidth=1.2)
    ax_z.plot(t, gb[:, 2], label="grapple z", linewidth=1.2)
    ax_z.plot(t, log[:, 2], label="log z", linewidth=1.2)

    idx = {int(step): k for k, step in enumerate(t)}
    for step, kind in events:
        k = idx[int(step)]
        marker = "^" if kind == "attach" else "v"
        color = "green" if kind == "attach" else "red"
        ax_xy.plot(gb[k, 0], gb[k, 1], marker, color=color, markersize=9,
                   label=kind)
        ax_z.axvline(step, color=color, linestyle=":", linewidth=0.8)

    ax_xy.set_xlabel("x [m]")
    ax_xy.set_ylabel("y [m]")
    ax_xy.set_aspect("equal", adjustable="datalim")
    ax_xy.legend(fontsize=8)
    ax_z.set_xlabel("step")
    ax_z.set_ylabel("z [m]")
    ax_z.legend(fontsize=8)
    fig.tight_layout()
    info = {
        "events": events,
        "n_attach": sum(1 for _, k in events if k == "attach"),
        "n_release": sum(1 for _, k in events if k == "release"),
        "final_log": tuple(float(c) for c in log[-1]),
        "success": bool(records[-1]["success"]),
        "steps": len(records),
    }
    if out_path:
        save_figure(fig, out_path)
    return fig, info
