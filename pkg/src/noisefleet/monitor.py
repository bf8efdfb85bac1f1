"""Read-side analytics over the store and telemetry logs: data yield,
ambient-exceedance metrics, and threshold alerts.

Yield for an hour is 100 * readable minute-files / 60; a file counts only if
its tar parses with both CSVs at full row counts (index rows flagged corrupt
count as unreadable). Ambient is L90: the level exceeded 90% of the time over
the trailing 24 h of 1 s A-weighted values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from .errors import AlertRuleError, AnalysisError
from .node import TELEMETRY_FIELDS
from .store import StoreCatalog

MINUTES_PER_HOUR = 60
AMBIENT_WINDOW_S = 24 * 3600
AMBIENT_MIN_SPAN_S = 3600
EXCEEDANCE_MARGIN_DB = 10.0


def compute_yield(catalog: StoreCatalog, sensor_id: str, hour_ts: int) -> float:
    """Percentage of the hour's 60 expected minute-files that are readable."""
    count = min(catalog.readable_count(sensor_id, hour_ts), MINUTES_PER_HOUR)
    return 100.0 * count / MINUTES_PER_HOUR


@dataclass(frozen=True)
class YieldMatrix:
    sensors: list[str]  # ordered by ascending total yield
    hours: np.ndarray  # hour timestamps
    grid: np.ndarray  # (sensor, hour) percentages
    totals: dict[str, float]
    network_mean: float
    network_median: float

    def sensor_series(self, sensor_id: str) -> np.ndarray:
        return self.grid[self.sensors.index(sensor_id)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.grid, index=self.sensors, columns=self.hours)
        frame.index.name = "sensor_id"
        return frame


def yield_matrix(catalog: StoreCatalog, sensors: Iterable[str], start_ts: int,
                 end_ts: int) -> YieldMatrix:
    """Sensors-by-hours yield grid over [start, end); sensors come back
    ordered by ascending total yield."""
    sensors = list(sensors)
    hours = np.arange(start_ts, end_ts, 3600, dtype=np.int64)
    grid = np.zeros((len(sensors), hours.size))
    for i, sensor in enumerate(sensors):
        for j, hour in enumerate(hours):
            grid[i, j] = compute_yield(catalog, sensor, int(hour))
    totals = {s: float(grid[i].mean()) if hours.size else 0.0 for i, s in enumerate(sensors)}
    order = np.argsort([totals[s] for s in sensors], kind="stable")
    sensors_sorted = [sensors[i] for i in order]
    grid = grid[order]
    values = np.array([totals[s] for s in sensors_sorted]) if sensors else np.array([0.0])
    return YieldMatrix(
        sensors=sensors_sorted,
        hours=hours,
        grid=grid,
        totals={s: totals[s] for s in sensors_sorted},
        network_mean=float(values.mean()),
        network_median=float(np.median(values)),
    )


def ambient_level(slow_dba: np.ndarray, ts: np.ndarray | None = None,
                  now_ts: int | None = None) -> float:
    """L90 of the trailing 24 h of 1 s dBA values: the level exceeded 90% of
    the time, i.e. the 10th percentile. Falls back to the available span when
    shorter than 24 h but at least 1 h."""
    values = np.asarray(slow_dba, dtype=float)
    if ts is not None and now_ts is not None:
        ts = np.asarray(ts)
        values = values[(ts > now_ts - AMBIENT_WINDOW_S) & (ts <= now_ts)]
    if values.size < AMBIENT_MIN_SPAN_S:
        raise AnalysisError(
            f"ambient undefined: need >= {AMBIENT_MIN_SPAN_S} 1 s samples, got {values.size}"
        )
    return float(np.percentile(values, 10.0))


def exceedance_fraction(slow_dba_hour: np.ndarray, ambient_db: float) -> float:
    """Percentage of the hour spent more than 10 dB above ambient."""
    values = np.asarray(slow_dba_hour, dtype=float)
    above = int(np.sum(values > ambient_db + EXCEEDANCE_MARGIN_DB))
    return 100.0 * above / 3600.0


@dataclass(frozen=True)
class AlertRule:
    metric: str
    comparator: str  # ">" | "<"
    threshold: float
    sustain_s: float

    def __post_init__(self):
        if self.metric not in TELEMETRY_FIELDS:
            raise AlertRuleError(f"unknown metric {self.metric!r}")
        if self.comparator not in (">", "<"):
            raise AlertRuleError(f"unknown comparator {self.comparator!r}")
        if self.sustain_s <= 0:
            raise AlertRuleError("sustain duration must be positive")

    def breaches(self, value: float) -> bool:
        return value > self.threshold if self.comparator == ">" else value < self.threshold


DEFAULT_ALERT_RULES = (AlertRule("ram_usage_pct", ">", 25.0, 600.0),)


def rules_from_config(raw_rules: Iterable[dict]) -> tuple[AlertRule, ...]:
    rules = []
    for raw in raw_rules:
        try:
            rules.append(
                AlertRule(
                    metric=raw["metric"],
                    comparator=raw.get("comparator", ">"),
                    threshold=float(raw["threshold"]),
                    sustain_s=float(raw.get("sustain_s", 600.0)),
                )
            )
        except KeyError as exc:
            raise AlertRuleError(f"alert rule missing field {exc}") from exc
    return tuple(rules)


@dataclass(frozen=True)
class AlertEvent:
    node_id: str
    metric: str
    comparator: str
    threshold: float
    breach_start_ts: int
    fired_ts: int
    peak_value: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "node_id": self.node_id,
                "metric": self.metric,
                "rule": f"{self.metric} {self.comparator} {self.threshold:g}",
                "breach_start_ts": self.breach_start_ts,
                "fired_ts": self.fired_ts,
                "peak_value": round(self.peak_value, 3),
            },
            sort_keys=True,
        )


class AlertEngine:
    """Episode detector that can be fed a telemetry stream in chunks.

    Per (node, rule): an episode opens when the metric first breaches, fires
    once the breach has held continuously (on consecutive records) for the
    sustain window, and re-arms only after a non-breaching record. State
    carries across chunks, so multi-GB logs stream through in bounded memory;
    each node's records must arrive in time order.
    """

    def __init__(self, rules: Iterable[AlertRule] = DEFAULT_ALERT_RULES):
        self.rules = list(rules)
        # (node, rule_idx) -> [breach_start_ts, fired, peak]
        self._state: dict[tuple[str, int], list] = {}
        self.events: list[AlertEvent] = []

    def feed(self, telemetry: pd.DataFrame) -> list[AlertEvent]:
        for rule in self.rules:
            if rule.metric not in telemetry.columns:
                raise AlertRuleError(f"telemetry stream lacks metric {rule.metric!r}")
        new_events: list[AlertEvent] = []
        for node_id, group in telemetry.groupby("node_id", sort=True):
            ts = group["ts"].to_numpy()
            if ts.size == 0:
                continue
            for rule_idx, rule in enumerate(self.rules):
                values = group[rule.metric].to_numpy(dtype=float)
                breach = values > rule.threshold if rule.comparator == ">" else values < rule.threshold
                new_events.extend(self._feed_node(str(node_id), rule_idx, ts, values, breach))
        self.events.extend(new_events)
        return new_events

    def _feed_node(self, node_id: str, rule_idx: int, ts, values, breach) -> list[AlertEvent]:
        rule = self.rules[rule_idx]
        key = (node_id, rule_idx)
        out: list[AlertEvent] = []
        edges = np.flatnonzero(np.diff(breach.astype(np.int8)))
        bounds = np.concatenate(([0], edges + 1, [breach.size]))
        carry = self._state.get(key)
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if not breach[lo]:
                carry = None
                continue
            if carry is not None and lo == 0:
                start, fired, peak = carry
            else:
                start, fired, peak = int(ts[lo]), False, -np.inf
            peak = max(peak, float(values[lo:hi].max()))
            if not fired and ts[hi - 1] - start >= rule.sustain_s:
                fire_idx = lo + int(np.searchsorted(ts[lo:hi], start + rule.sustain_s))
                out.append(
                    AlertEvent(
                        node_id=node_id,
                        metric=rule.metric,
                        comparator=rule.comparator,
                        threshold=rule.threshold,
                        breach_start_ts=int(start),
                        fired_ts=int(ts[fire_idx]),
                        peak_value=peak,
                    )
                )
                fired = True
            carry = [start, fired, peak]
        if carry is not None and breach[-1]:
            self._state[key] = carry
        else:
            self._state.pop(key, None)
        return out


def evaluate_alerts(telemetry: pd.DataFrame, rules: Iterable[AlertRule] = DEFAULT_ALERT_RULES
                    ) -> list[AlertEvent]:
    """One alert per sustained breach episode over an in-memory stream."""
    engine = AlertEngine(rules)
    engine.feed(telemetry.sort_values(["node_id", "ts"]))
    events = sorted(engine.events, key=lambda e: (e.fired_ts, e.node_id, e.metric))
    return events


def slow_dba_series(store_root: str | Path, sensor_id: str) -> tuple[np.ndarray, np.ndarray]:
    """All 1 s dBA samples for a sensor from stored minute files (real-bytes
    stores only), time-ordered. Returns (ts_seconds, dba)."""
    from .acoustics import minute_slow_dba
    from .store import list_days, read_day

    root = Path(store_root)
    ts_all: list[int] = []
    dba_all: list[float] = []
    sensor_dir = root / "spl" / sensor_id
    for date in list_days(root, "spl", sensor_id):
        for item in sorted(read_day(sensor_dir, date, "spl"), key=lambda it: it.ts):
            if not item.readable:
                continue
            data = _item_bytes(sensor_dir, date, item.item_id)
            if data is None:
                continue
            ts, dba = minute_slow_dba(data)
            ts_all.extend(ts)
            dba_all.extend(dba)
    return np.asarray(ts_all, dtype=np.int64), np.asarray(dba_all)


def _item_bytes(sensor_dir: Path, date: str, item_id: str) -> bytes | None:
    import tarfile

    day_dir = sensor_dir / date
    if day_dir.is_dir():
        for candidate in day_dir.glob(f"{item_id}.*"):
            return candidate.read_bytes()
        return None
    day_tar = sensor_dir / f"{date}.tar"
    if day_tar.is_file():
        with tarfile.open(day_tar) as tar:
            for member in tar.getmembers():
                if Path(member.name).stem == item_id:
                    return tar.extractfile(member).read()
    return None
