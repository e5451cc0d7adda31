from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pytest

from forwarder_plots import (
    PlotDataError,
    plot_curves,
    plot_heatmap,
    plot_trajectory,
    read_heatmap,
    read_trajectory,
    save_figure,
)

FIXTURES = Path(__file__).parent / "fixtures"
RUNS = [FIXTURES / f"run{i}.csv" for i in range(5)]

# default bed rectangle published with the demo format (x, y half-extents
# around the bed center)
BED_X = (-3.3, 0.3)
BED_Y = (-1.0, 1.0)


def test_curves_five_runs_plus_average():
    fig, info = plot_curves(RUNS)
    assert info["n_runs"] == 5
    assert len(info["series"]) == 6
    assert info["series"][-1] == "average"
    ax = fig.axes[0]
    # 6 data series plus one vertical rule per stage transition
    assert len(ax.get_lines()) == 6 + len(info["transitions"])
    assert info["transitions"] == [4]
    plt.close(fig)


def test_curves_average_is_pointwise_mean():
    fig, _ = plot_curves(RUNS)
    lines = fig.axes[0].get_lines()
    stack = np.array([line.get_ydata() for line in lines[:5]])
    assert np.allclose(lines[5].get_ydata(), stack.mean(axis=0))
    plt.close(fig)


def test_curves_empty_file_is_an_error(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("epoch,stage,mean_return\n")
    with pytest.raises(PlotDataError):
        plot_curves([RUNS[0], empty])


def test_heatmap_full_grid_and_argmax():
    fig, info = plot_heatmap(FIXTURES / "heatmap.csv")
    assert len(info["arrangements"]) == 4
    assert len(info["weights"]) == 3
    assert info["missing"] == []
    _, _, values = read_heatmap(FIXTURES / "heatmap.csv")
    csv_max = max(v for row in values for v in row)
    assert info["best"][2] == csv_max
    # the starred annotation is the argmax cell
    starred = [t for t in fig.axes[0].texts if t.get_text().endswith("*")]
    assert len(starred) == 1
    assert float(starred[0].get_text().rstrip(" *")) == round(csv_max, 1)
    plt.close(fig)


def test_heatmap_missing_cells_warn_and_hatch(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("arrangement,w=1,w=5\nFLAT,1.5,\nSEPARATE,,2.5\n")
    with pytest.warns(UserWarning, match="missing"):
        fig, info = plot_heatmap(path)
    assert set(info["missing"]) == {("FLAT", 5.0), ("SEPARATE", 1.0)}
    hatched = [p for p in fig.axes[0].patches if p.get_hatch()]
    assert len(hatched) == 2
    assert info["best"] == ("SEPARATE", 5.0, 2.5)
    plt.close(fig)


def test_heatmap_constant_grid_renders(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("arrangement,w=1,w=5\nFLAT,3.0,3.0\nSEPARATE,3.0,3.0\n")
    fig, info = plot_heatmap(path)
    assert info["best"][2] == 3.0
    assert info["missing"] == []
    plt.close(fig)


def test_trajectory_markers_match_transitions():
    fig, info = plot_trajectory(FIXTURES / "demo.jsonl")
    records = read_trajectory(FIXTURES / "demo.jsonl")
    transitions = sum(
        1 for a, b in zip(records, records[1:])
        if bool(a["attached"]) != bool(b["attached"]))
    transitions += bool(records[0]["attached"])
    assert info["n_attach"] + info["n_release"] == transitions
    assert info["n_attach"] >= 1 and info["n_release"] >= 1
    # event markers drawn in the x-y panel: one extra line per event
    ax_xy = fig.axes[0]
    assert len(ax_xy.get_lines()) == 2 + len(info["events"])
    plt.close(fig)


def test_trajectory_log_ends_inside_bed():
    fig, info = plot_trajectory(FIXTURES / "demo.jsonl")
    x, y, _ = info["final_log"]
    assert BED_X[0] <= x <= BED_X[1]
    assert BED_Y[0] <= y <= BED_Y[1]
    assert info["success"]
    plt.close(fig)


def test_attached_segments_move_rigidly():
    records = read_trajectory(FIXTURES / "demo.jsonl")
    gb = np.array([r["gb_pos"] for r in records])
    log = np.array([r["log_pos"] for r in records])
    attached = np.array([bool(r["attached"]) for r in records])
    both = attached[:-1] & attached[1:]
    assert both.any()
    d_gb = np.diff(gb, axis=0)[both]
    d_log = np.diff(log, axis=0)[both]
    assert np.allclose(d_gb, d_log, atol=1e-5)


@pytest.mark.parametrize("ext", ["png", "svg"])
def test_figures_are_deterministic(tmp_path, ext):
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.{ext}"
        fig, _ = plot_curves(RUNS)
        save_figure(fig, str(out))
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]
