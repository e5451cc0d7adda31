"""Readers for the published metrics CSV, heatmap CSV and demo JSONL formats.

This package consumes only these documented file contracts; it never imports
the training package.
"""
from __future__ import annotations

import csv
import json

METRICS_REQUIRED = ("epoch", "stage", "mean_return")
TRAJECTORY_REQUIRED = ("t", "q", "targets", "log_pos", "gb_pos",
                       "r1", "r2", "r3", "attached", "success")


class PlotDataError(ValueError):
    pass


def read_metrics(path):
    """Metrics CSV -> list of row dicts with numeric fields coerced."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotDataError(f"{path}: empty metrics file")
        for col in METRICS_REQUIRED:
            if col not in reader.fieldnames:
                raise PlotDataError(f"{path}: missing metrics column {col!r}")
        rows = []
        for row in reader:
            rows.append({
                "epoch": int(row["epoch"]),
                "stage": int(row["stage"]),
                "mean_return": float(row["mean_return"]),
            })
    if not rows:
        raise PlotDataError(f"{path}: metrics file has no data rows")
    return rows


def stage_transitions(rows):
    """Epochs at which the stage column changes value."""
    return [rows[i]["epoch"] for i in range(1, len(rows))
            if rows[i]["stage"] != rows[i - 1]["stage"]]


def read_heatmap(path):
    """Heatmap CSV -> (arrangements, weights, values) with None for missing."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PlotDataError(f"{path}: empty heatmap file") from None
        if not header or header[0] != "arrangement":
            raise PlotDataError(f"{path}: first heatmap column must be "
                                "'arrangement'")
        weights = []
        for col in header[1:]:
            if not col.startswith("w="):
                raise PlotDataError(f"{path}: bad heatmap column {col!r}")
            weights.append(float(col[2:]))
        arrangements, values = [], []
        for row in reader:
            if len(row) != len(header):
                raise PlotDataError(f"{path}: row {row[0]!r} has "
                                    f"{len(row) - 1} cells, expected "
                                    f"{len(weights)}")
            arrangements.append(row[0])
            values.append([float(c) if c.strip() else None for c in row[1:]])
    if not arrangements:
        raise PlotDataError(f"{path}: heatmap file has no data rows")
    return arrangements, weights, values


def read_trajectory(path):
    """Demo JSONL -> list of step records, schema checked per line."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PlotDataError(f"{path}: line {lineno}: {exc}") from None
            for field in TRAJECTORY_REQUIRED:
                if field not in rec:
                    raise PlotDataError(f"{path}: line {lineno}: missing "
                                        f"field {field!r}")
            records.append(rec)
    if not records:
        raise PlotDataError(f"{path}: trajectory file has no records")
    return records


def attach_release_events(records):
    """(step, kind) transitions of the attached flag; kind in attach/release."""
    events = []
    prev = False
    for rec in records:
        now = bool(rec["attached"])
        if now and not prev:
            events.append((rec["t"], "attach"))
        elif prev and not now:
            events.append((rec["t"], "release"))
        prev = now
    return events
