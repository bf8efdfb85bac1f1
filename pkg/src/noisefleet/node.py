"""Sensor-node state machine pieces.

Everything here is a pure function or an explicit state object advanced by
ticks from the simulation world: snippet capture scheduling, the local data
cache with its 95% deletion policy, the prioritized uploader, telemetry
snapshots, and process supervision. A node shares nothing with other nodes.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Optional

import numpy as np

from .errors import DomainError

KIND_SPL = "spl"
KIND_AUDIO = "audio"
KIND_STATUS = "status"

# Upload priority, highest first. Status is never cached.
UPLOAD_PRIORITY = (KIND_SPL, KIND_AUDIO, KIND_STATUS)

DEFAULT_CACHE_CAPACITY_BYTES = 12_000_000_000  # 12 GB data partition
DELETION_THRESHOLD = 0.95
TELEMETRY_PERIOD_S = 3
SNIPPET_GAP_RANGE_S = (5.0, 15.0)
SNIPPET_DURATION_S = 10.0

TELEMETRY_FIELDS = (
    "cpu_load_1min_pct",
    "cpu_load_15min_pct",
    "cpu_temp_c",
    "ram_usage_pct",
    "wifi_signal_strength_pct",
    "wifi_signal_quality_pct",
    "data_usage_pct",
    "tmp_usage_pct",
    "varlog_usage_pct",
    "running_processes",
)

TELEMETRY_COLUMNS = ("node_id", "ts") + TELEMETRY_FIELDS

_PCT_FIELDS = tuple(f for f in TELEMETRY_FIELDS if f.endswith("_pct"))


@dataclass(frozen=True)
class TelemetryRecord:
    """One 3 s status snapshot; serialized as a ~1 KB JSON payload."""

    node_id: str
    ts: int
    cpu_load_1min_pct: float
    cpu_load_15min_pct: float
    cpu_temp_c: float
    ram_usage_pct: float
    wifi_signal_strength_pct: float
    wifi_signal_quality_pct: float
    data_usage_pct: float
    tmp_usage_pct: float
    varlog_usage_pct: float
    running_processes: int

    def __post_init__(self):
        for name in _PCT_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise DomainError(f"{name}={value} outside [0, 100]")

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in TELEMETRY_COLUMNS}, sort_keys=True)


class CacheEntry(NamedTuple):
    kind: str
    entry_id: str
    size_bytes: int
    created_at: int


class CacheState:
    """Node-local cache with exact byte accounting.

    Entries are unique by id and kept in arrival (oldest-first) order per
    kind. Only spl and audio are cacheable; status payloads never enter.
    """

    def __init__(self, capacity_bytes: int = DEFAULT_CACHE_CAPACITY_BYTES,
                 deletion_threshold: float = DELETION_THRESHOLD):
        if capacity_bytes <= 0:
            raise DomainError("cache capacity must be positive")
        self.capacity_bytes = capacity_bytes
        self.deletion_threshold = deletion_threshold
        self.used_bytes = 0
        self._queues: dict[str, deque[CacheEntry]] = {
            KIND_SPL: deque(),
            KIND_AUDIO: deque(),
        }
        self._ids: set[str] = set()

    def __len__(self):
        return len(self._ids)

    def count(self, kind: str) -> int:
        return len(self._queues[kind])

    def entries(self, kind: str) -> tuple[CacheEntry, ...]:
        return tuple(self._queues[kind])

    @property
    def usage_fraction(self) -> float:
        return self.used_bytes / self.capacity_bytes

    def add(self, kind: str, entry_id: str, size_bytes: int, created_at: int) -> CacheEntry:
        if kind not in self._queues:
            raise DomainError(f"kind {kind!r} is not cacheable")
        if entry_id in self._ids:
            raise DomainError(f"duplicate cache entry id {entry_id!r}")
        entry = CacheEntry(kind, entry_id, size_bytes, created_at)
        self._queues[kind].append(entry)
        self._ids.add(entry_id)
        self.used_bytes += size_bytes
        return entry

    def oldest(self, kind: str) -> Optional[CacheEntry]:
        queue = self._queues[kind]
        return queue[0] if queue else None

    def pop_oldest(self, kind: str) -> Optional[CacheEntry]:
        queue = self._queues[kind]
        if not queue:
            return None
        entry = queue.popleft()
        self._ids.discard(entry.entry_id)
        self.used_bytes -= entry.size_bytes
        return entry

    def remove(self, entry_id: str) -> bool:
        for queue in self._queues.values():
            for i, entry in enumerate(queue):
                if entry.entry_id == entry_id:
                    del queue[i]
                    self._ids.discard(entry_id)
                    self.used_bytes -= entry.size_bytes
                    return True
        return False


def tick_deletion_policy(cache: CacheState) -> list[CacheEntry]:
    """Reclaim space once usage reaches the 95% threshold.

    Deletes the oldest audio entry per enactment until usage drops below the
    threshold; SPL entries are touched only when no audio remains. Returns
    the deleted entries in deletion order (ids via ``entry_id``).
    """
    deleted: list[CacheEntry] = []
    while cache.used_bytes >= cache.deletion_threshold * cache.capacity_bytes:
        victim = cache.pop_oldest(KIND_AUDIO) or cache.pop_oldest(KIND_SPL)
        if victim is None:
            break
        deleted.append(victim)
    return deleted


@dataclass(frozen=True)
class UploadItem:
    kind: str
    item_id: str
    size_bytes: int
    created_at: int

    @property
    def cached(self) -> bool:
        return self.kind in (KIND_SPL, KIND_AUDIO)


@dataclass(frozen=True)
class UploadOutcome:
    attempted: Optional[UploadItem]
    success: bool
    link_up: bool

    @property
    def no_op(self) -> bool:
        return self.attempted is None


def uploader_tick(
    cache: CacheState,
    status_item: Optional[UploadItem],
    link_available: bool,
    server_ack: Callable[[UploadItem], bool],
) -> UploadOutcome:
    """One uploader cycle: send the highest-priority pending item.

    SPL before audio before status; within a kind, oldest first. A cached
    item is removed only on a positive ack. A failed status upload is simply
    dropped; the next cycle sends a fresh one.
    """
    if not link_available:
        return UploadOutcome(attempted=None, success=False, link_up=False)
    for kind in (KIND_SPL, KIND_AUDIO):
        entry = cache.oldest(kind)
        if entry is not None:
            item = UploadItem(entry.kind, entry.entry_id, entry.size_bytes, entry.created_at)
            ok = bool(server_ack(item))
            if ok:
                cache.remove(entry.entry_id)
            return UploadOutcome(attempted=item, success=ok, link_up=True)
    if status_item is not None:
        ok = bool(server_ack(status_item))
        return UploadOutcome(attempted=status_item, success=ok, link_up=True)
    return UploadOutcome(attempted=None, success=False, link_up=True)


def plan_snippets(
    rng: np.random.Generator,
    start_s: float,
    horizon_s: float,
    gap_range_s: tuple[float, float] = SNIPPET_GAP_RANGE_S,
    duration_s: float = SNIPPET_DURATION_S,
) -> list[tuple[float, float]]:
    """Capture intervals over [start, start+horizon): 10 s recordings with a
    strictly positive random gap between them, so no two are adjacent."""
    lo, hi = gap_range_s
    if not 0.0 < lo <= hi:
        raise DomainError("gap range must be positive")
    intervals = []
    t = start_s + float(rng.uniform(lo, hi))
    end = start_s + horizon_s
    while t < end:
        intervals.append((t, t + duration_s))
        t += duration_s + float(rng.uniform(lo, hi))
    return intervals


def schedule_snippets(
    rng: np.random.Generator,
    minute_start_s: float,
    gap_range_s: tuple[float, float] = SNIPPET_GAP_RANGE_S,
) -> list[tuple[float, float]]:
    """Snippet capture intervals whose start falls within the given minute.

    Expected about three per minute with the default gap distribution; the
    final interval may carry over past the minute edge.
    """
    return plan_snippets(rng, minute_start_s, 60.0, gap_range_s)


@dataclass
class ProcessState:
    """Supervision view of one node process."""

    name: str
    cpu_pct: float = 0.0
    ram_pct: float = 0.0
    cpu_breach_s: float = 0.0
    ram_breach_s: float = 0.0
    crashed: bool = False


@dataclass(frozen=True)
class SupervisorThresholds:
    cpu_limit_pct: float = 90.0
    cpu_sustain_s: float = 300.0
    ram_limit_pct: float = 25.0
    ram_sustain_s: float = 600.0


@dataclass(frozen=True)
class RestartAction:
    process: str
    reason: str


def supervisor_tick(
    processes: Iterable[ProcessState],
    thresholds: SupervisorThresholds = SupervisorThresholds(),
) -> list[RestartAction]:
    """Restart any crashed process, and any process holding above a CPU/RAM
    threshold for its sustain window. Restarting clears breach and crash
    state (leak state is the caller's to reset on the action)."""
    actions = []
    for proc in processes:
        if proc.crashed:
            actions.append(RestartAction(proc.name, "crash"))
        elif proc.ram_pct > thresholds.ram_limit_pct and proc.ram_breach_s >= thresholds.ram_sustain_s:
            actions.append(RestartAction(proc.name, "ram"))
        elif proc.cpu_pct > thresholds.cpu_limit_pct and proc.cpu_breach_s >= thresholds.cpu_sustain_s:
            actions.append(RestartAction(proc.name, "cpu"))
        else:
            continue
        proc.crashed = False
        proc.cpu_breach_s = 0.0
        proc.ram_breach_s = 0.0
    return actions


@dataclass
class NodeStatusView:
    """Instantaneous node state the telemetry snapshot reads from; the
    simulation world owns the dynamics behind these values."""

    node_id: str
    ts: int
    powered: bool
    cpu_load_1min_pct: float = 30.0
    cpu_load_15min_pct: float = 30.0
    cpu_temp_c: float = 55.0
    ram_usage_pct: float = 20.0
    wifi_signal_strength_pct: float = 80.0
    wifi_signal_quality_pct: float = 85.0
    data_usage_pct: float = 0.0
    tmp_usage_pct: float = 0.1
    varlog_usage_pct: float = 10.0
    running_processes: int = 8


def telemetry_tick(state: NodeStatusView) -> Optional[TelemetryRecord]:
    """Snapshot the 10 status variables. A powered-off node emits nothing."""
    if not state.powered:
        return None
    clamp = lambda v: float(min(max(v, 0.0), 100.0))
    return TelemetryRecord(
        node_id=state.node_id,
        ts=state.ts,
        cpu_load_1min_pct=clamp(state.cpu_load_1min_pct),
        cpu_load_15min_pct=clamp(state.cpu_load_15min_pct),
        cpu_temp_c=float(state.cpu_temp_c),
        ram_usage_pct=clamp(state.ram_usage_pct),
        wifi_signal_strength_pct=clamp(state.wifi_signal_strength_pct),
        wifi_signal_quality_pct=clamp(state.wifi_signal_quality_pct),
        data_usage_pct=clamp(state.data_usage_pct),
        tmp_usage_pct=clamp(state.tmp_usage_pct),
        varlog_usage_pct=clamp(state.varlog_usage_pct),
        running_processes=int(state.running_processes),
    )
