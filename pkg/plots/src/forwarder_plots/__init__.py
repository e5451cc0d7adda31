"""Static figures for training metrics, sweep grids and demo trajectories."""
from .figures import plot_curves, plot_heatmap, plot_trajectory, save_figure
from .io import (
    PlotDataError,
    attach_release_events,
    read_heatmap,
    read_metrics,
    read_trajectory,
    stage_transitions,
)

__version__ = "0.1.0"

__all__ = [
    "PlotDataError",
    "attach_release_events",
    "plot_curves",
    "plot_heatmap",
    "plot_trajectory",
    "read_heatmap",
    "read_metrics",
    "read_trajectory",
    "save_figure",
    "stage_transitions",
]
