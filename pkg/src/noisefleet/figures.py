"""Figure rendering for the analyze/report paths.

Every renderer takes already-computed artifacts and writes a PNG next to the
delimited outputs; nothing here recomputes analytics.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .monitor import YieldMatrix

FIG_DPI = 130


def render_yield_heatmap(matrix: YieldMatrix, out_path: str | Path) -> Path:
    """Sensors-by-hours yield heatmap, sensors ordered by ascending total."""
    out_path = Path(out_path)
    n_sensors = max(len(matrix.sensors), 1)
    fig, ax = plt.subplots(figsize=(10, max(2.5, 0.28 * n_sensors)))
    if matrix.grid.size:
        im = ax.imshow(matrix.grid, aspect="auto", cmap="viridis", vmin=0, vmax=100,
                       interpolation="nearest")
        fig.colorbar(im, ax=ax, label="yield %")
        hours = (matrix.hours - matrix.hours[0]) / 3600
        ticks = np.linspace(0, len(hours) - 1, min(8, len(hours))).astype(int)
        ax.set_xticks(ticks)
        ax.set_xticklabels([f"{hours[t]:.0f}" for t in ticks])
    labels = [f"{s} ({matrix.totals[s]:.1f}%)" for s in matrix.sensors]
    ax.set_yticks(range(len(matrix.sensors)))
    ax.set_yticklabels(labels, fontsize=7)
    ax.set_xlabel("hour of run")
    ax.set_title("data yield by sensor and hour")
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def render_lda_projection(projection: pd.DataFrame, out_path: str | Path) -> Path:
    """Scatter of the two discriminant components, colored by class."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(7, 6))
    for label, color in (("stable", "#2a7fb8"), ("prefail", "#d65f2a")):
        sub = projection[projection["label"] == label]
        ax.scatter(sub["component_1"], sub["component_2"], s=4, alpha=0.35,
                   label=label, color=color, linewidths=0)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.set_title("discriminant projection of telemetry rows")
    ax.legend(markerscale=3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def render_metric_boxes(report: dict, out_path: str | Path) -> Path:
    """Per-trial accuracy and per-class precision/recall distributions."""
    out_path = Path(out_path)
    trials = report["trials"]
    series = {
        "accuracy": [t["accuracy_rows"] for t in trials],
        "stable prec": [t["classes"]["stable"]["precision"] for t in trials],
        "stable rec": [t["classes"]["stable"]["recall"] for t in trials],
        "prefail prec": [t["classes"]["prefail"]["precision"] for t in trials],
        "prefail rec": [t["classes"]["prefail"]["recall"] for t in trials],
    }
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.boxplot(series.values(), tick_labels=list(series.keys()))
    for i, values in enumerate(series.values(), start=1):
        ax.annotate(f"{np.mean(values) * 100:.1f}", (i, min(values)),
                    textcoords="offset points", xytext=(0, -14),
                    ha="center", fontsize=7)
    ax.set_ylabel("score")
    ax.set_title(f"model scores over {len(trials)} trials (means below)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def render_feature_importances(report: dict, out_path: str | Path) -> Path:
    """Sorted horizontal bars; importances total 100%."""
    out_path = Path(out_path)
    imp = report["feature_importances_pct"]
    ordered = sorted(imp.items(), key=lambda kv: kv[1])
    names = [k for k, _ in ordered]
    values = [v for _, v in ordered]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.barh(names, values, color="#4a8f5c")
    for i, v in enumerate(values):
        ax.annotate(f"{v:.1f}%", (v, i), textcoords="offset points",
                    xytext=(4, -3), fontsize=7)
    ax.set_xlabel("mean importance (total = 100%)")
    ax.set_title("feature importances")
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path


def render_exceedance_strip(exceedance: pd.DataFrame, out_path: str | Path) -> Path:
    """Per-sensor hourly exceedance as stacked strips."""
    out_path = Path(out_path)
    sensors = sorted(exceedance["sensor_id"].unique())
    fig, ax = plt.subplots(figsize=(10, max(2.0, 0.4 * len(sensors))))
    pivot = exceedance.pivot_table(index="sensor_id", columns="hour_ts",
                                   values="exceedance_pct", aggfunc="first")
    if pivot.size:
        im = ax.imshow(pivot.to_numpy(), aspect="auto", cmap="magma", vmin=0, vmax=100,
                       interpolation="nearest")
        fig.colorbar(im, ax=ax, label="% of hour > ambient + 10 dB")
    ax.set_yticks(range(len(pivot.index)))
    ax.set_yticklabels(pivot.index, fontsize=7)
    ax.set_xlabel("hour of run")
    ax.set_title("ambient exceedance")
    fig.tight_layout()
    fig.savefig(out_path, dpi=FIG_DPI)
    plt.close(fig)
    return out_path
