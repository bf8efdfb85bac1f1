"""Downtime detection and prefail/stable window extraction.

A downtime is a maximal run of hours with zero yield; runs longer than the
threshold (default 6 h, strictly greater) are eligible for a prefail window:
the hour of telemetry ending at the downtime start (the lead-time knob slides
that hour earlier). Stable windows are hours flanked by at least 48 h of 100%
yield on both sides; per sensor they are sampled to match the prefail count
so classes stay balanced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from .errors import AnalysisError
from .node import TELEMETRY_FIELDS

HOUR_S = 3600
DOWNTIME_THRESHOLD_H = 6.0
STABLE_FLANK_H = 48
LEAD_TIME_H = 1


@dataclass(frozen=True)
class DowntimeInterval:
    sensor_id: str
    start_ts: int
    end_ts: int  # exclusive hour boundary

    @property
    def duration_hours(self) -> float:
        return (self.end_ts - self.start_ts) / HOUR_S

    def eligible(self, threshold_h: float = DOWNTIME_THRESHOLD_H) -> bool:
        return self.duration_hours > threshold_h


def detect_downtime(sensor_id: str, hour_ts: np.ndarray, yields: np.ndarray,
                    zero_pct: float = 0.0) -> list[DowntimeInterval]:
    """Maximal runs of hours whose yield is (at or below) the zero level."""
    hour_ts = np.asarray(hour_ts, dtype=np.int64)
    yields = np.asarray(yields, dtype=float)
    if hour_ts.size != yields.size:
        raise AnalysisError("hour grid and yield series differ in length")
    intervals = []
    run_start = None
    for i in range(hour_ts.size):
        down = yields[i] <= zero_pct
        if down and run_start is None:
            run_start = hour_ts[i]
        elif not down and run_start is not None:
            intervals.append(DowntimeInterval(sensor_id, int(run_start), int(hour_ts[i])))
            run_start = None
    if run_start is not None:
        intervals.append(DowntimeInterval(sensor_id, int(run_start), int(hour_ts[-1] + HOUR_S)))
    return intervals


@dataclass(frozen=True)
class WindowInstance:
    instance_id: str
    sensor_id: str
    label: str  # "prefail" | "stable"
    t0: int

    @property
    def t1(self) -> int:
        return self.t0 + HOUR_S


@dataclass
class ExtractionResult:
    instances: list[WindowInstance]
    rows: pd.DataFrame  # instance_id + the 10 telemetry features
    shortfalls: dict[str, int] = field(default_factory=dict)

    def instances_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"instance_id": w.instance_id, "sensor_id": w.sensor_id,
                 "label": w.label, "t0": w.t0}
                for w in self.instances
            ],
            columns=["instance_id", "sensor_id", "label", "t0"],
        )

    def per_sensor_counts(self) -> dict[str, dict[str, int]]:
        counts: dict[str, dict[str, int]] = {}
        for w in self.instances:
            counts.setdefault(w.sensor_id, {"prefail": 0, "stable": 0})[w.label] += 1
        return counts


def stable_candidates(hour_ts: np.ndarray, yields: np.ndarray,
                      flank_h: int = STABLE_FLANK_H) -> np.ndarray:
    """Hour starts with 100% yield across themselves and both 48 h flanks."""
    hour_ts = np.asarray(hour_ts, dtype=np.int64)
    full = np.asarray(yields, dtype=float) >= 100.0
    window = 2 * flank_h + 1
    if full.size < window:
        return np.array([], dtype=np.int64)
    # rolling all-true over the window centered on each hour
    kernel = np.convolve(full.astype(int), np.ones(window, dtype=int), mode="valid")
    centers = np.nonzero(kernel == window)[0] + flank_h
    return hour_ts[centers]


def prefail_windows(downtimes: list[DowntimeInterval], run_start_ts: int,
                    threshold_h: float = DOWNTIME_THRESHOLD_H,
                    lead_h: int = LEAD_TIME_H) -> list[int]:
    """Window starts (t0) for each eligible downtime; the window is the hour
    ending ``lead_h - 1`` hours before the downtime starts."""
    starts = []
    for interval in downtimes:
        if not interval.eligible(threshold_h):
            continue
        t0 = interval.start_ts - lead_h * HOUR_S
        if t0 >= run_start_ts:
            starts.append(t0)
    return starts


RowProvider = Callable[[str, int, int], pd.DataFrame]


def frame_row_provider(telemetry: pd.DataFrame) -> RowProvider:
    """Row provider over an in-memory telemetry frame."""
    if telemetry.empty:
        empty = pd.DataFrame(columns=["node_id", "ts"] + list(TELEMETRY_FIELDS))
        return lambda node_id, t0, t1: empty
    by_node = {str(k): g.sort_values("ts") for k, g in telemetry.groupby("node_id")}

    def provide(node_id: str, t0: int, t1: int) -> pd.DataFrame:
        group = by_node.get(node_id)
        if group is None:
            return telemetry.iloc[0:0]
        ts = group["ts"].to_numpy()
        lo, hi = np.searchsorted(ts, [t0, t1])
        return group.iloc[lo:hi]

    return provide


def extract_instances(
    yields_by_sensor: dict[str, tuple[np.ndarray, np.ndarray]],
    row_provider: RowProvider,
    rng: np.random.Generator,
    run_start_ts: int,
    threshold_h: float = DOWNTIME_THRESHOLD_H,
    lead_h: int = LEAD_TIME_H,
    flank_h: int = STABLE_FLANK_H,
) -> ExtractionResult:
    """All eligible prefail windows plus an equal per-sensor sample of stable
    windows (seeded, without replacement). A sensor without enough stable
    candidates contributes what it has; the shortfall is reported, never
    silently padded. Windows overlapping telemetry gaps keep their rows."""
    instances: list[WindowInstance] = []
    shortfalls: dict[str, int] = {}
    row_frames: list[pd.DataFrame] = []

    for sensor in sorted(yields_by_sensor):
        hour_ts, yields = yields_by_sensor[sensor]
        downtimes = detect_downtime(sensor, hour_ts, yields)
        pre_t0s = prefail_windows(downtimes, run_start_ts, threshold_h, lead_h)
        candidates = stable_candidates(hour_ts, yields, flank_h)
        candidates = np.setdiff1d(candidates, np.asarray(pre_t0s, dtype=np.int64))
        want = len(pre_t0s)
        if candidates.size < want:
            shortfalls[sensor] = want - int(candidates.size)
            picked = candidates
        else:
            picked = rng.choice(candidates, size=want, replace=False) if want else candidates[:0]
        picked = np.sort(picked)

        for label, t0s in (("prefail", pre_t0s), ("stable", picked.tolist())):
            for t0 in t0s:
                t0 = int(t0)
                window = WindowInstance(
                    instance_id=f"{sensor}_{label}_{t0}",
                    sensor_id=sensor,
                    label=label,
                    t0=t0,
                )
                instances.append(window)
                rows = row_provider(sensor, t0, t0 + HOUR_S)
                if len(rows):
                    block = rows[list(TELEMETRY_FIELDS)].copy()
                    block.insert(0, "instance_id", window.instance_id)
                    row_frames.append(block)

    columns = ["instance_id"] + list(TELEMETRY_FIELDS)
    rows = (
        pd.concat(row_frames, ignore_index=True)
        if row_frames
        else pd.DataFrame(columns=columns)
    )
    return ExtractionResult(instances=instances, rows=rows, shortfalls=shortfalls)


def collect_window_rows_csv(
    telemetry_csv, windows_by_node: dict[str, list[tuple[int, int]]],
    chunksize: int = 2_000_000,
) -> pd.DataFrame:
    """Scan a (possibly multi-GB) telemetry CSV once, keeping only rows that
    fall inside the given per-node windows."""
    keep: list[pd.DataFrame] = []
    spans = {
        node: (np.array([w[0] for w in ws]), np.array([w[1] for w in ws]))
        for node, ws in windows_by_node.items()
        if ws
    }
    for chunk in pd.read_csv(telemetry_csv, chunksize=chunksize):
        for node, group in chunk.groupby("node_id"):
            node_spans = spans.get(str(node))
            if node_spans is None:
                continue
            starts, ends = node_spans
            ts = group["ts"].to_numpy()
            idx = np.searchsorted(starts, ts, side="right") - 1
            valid = idx >= 0
            valid[valid] &= ts[valid] < ends[idx[valid]]
            if valid.any():
                keep.append(group.iloc[np.nonzero(valid)[0]])
    if not keep:
        return pd.DataFrame(columns=["node_id", "ts"] + list(TELEMETRY_FIELDS))
    return pd.concat(keep, ignore_index=True)
