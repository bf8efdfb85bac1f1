"""Deterministic discrete-event world: clock, link dynamics, fault injection,
node/server orchestration, and run export.

The world advances in one-minute macro steps with per-day vectorized
dynamics; observable cadences keep their contract (3 s telemetry grid,
per-minute capture and upload ticks). Identical (scenario, seed) pairs yield
identical artifacts byte for byte: every random stream derives from
(seed, node, day-chunk, stream-tag), draws are made at full-chunk size and
sliced, and all draws are fault-independent, so neither fault timing nor the
advance() call pattern can shift randomness.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from . import acoustics
from .errors import DomainError, ScenarioError
from .ingest import ServerState, assign_server
from .node import (
    KIND_AUDIO,
    KIND_SPL,
    CacheState,
    plan_snippets,
    tick_deletion_policy,
)
from .scenario import DEFAULT_FAULT_PARAMS, FaultConfig, Scenario
from .store import PersistentStore

CHUNK_S = 86400
MINUTE_S = 60

# Stream tags keep per-(node, chunk) generators independent of one another.
_STREAM_WIFI = 1
_STREAM_CPU = 2
_STREAM_UPLOADS = 3
_STREAM_STATUS = 4
_STREAM_SNIPPETS = 5
_STREAM_SYNTH = 6

_BASE_CPU = 30.0
_BASE_RAM = 20.0
_BASE_TEMP = 48.0
_BASE_TMP = 0.1
_BASE_PROCS = 8
_VARLOG_RATE_PCT_PER_H = 0.35
_VARLOG_WRAP_PCT = 45.0
_VARLOG_FLOOR_PCT = 5.0


def link_success_prob(quality_pct, q0: float = 30.0, s: float = 8.0):
    """Upload success probability from Wi-Fi quality: logistic in quality."""
    return 1.0 / (1.0 + np.exp(-(np.asarray(quality_pct, dtype=float) - q0) / s))


@dataclass
class LinkState:
    signal_strength_pct: float
    signal_quality_pct: float
    ap_up: bool = True
    q0: float = 30.0
    s: float = 8.0

    @property
    def success_prob(self) -> float:
        if not self.ap_up:
            return 0.0
        return float(link_success_prob(self.signal_quality_pct, self.q0, self.s))


def link_transfer(link: LinkState, item_bytes: int, rng: np.random.Generator) -> bool:
    """Bernoulli transfer outcome for one item over the current link."""
    p = link.success_prob
    return bool(p > 0.0 and rng.random() < p)


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    target: str
    onset_ts: int
    duration_s: int
    params: dict = field(default_factory=dict)

    @property
    def end_ts(self) -> int:
        return self.onset_ts + self.duration_s

    def param(self, name: str, default=None):
        if name in self.params:
            return self.params[name]
        return DEFAULT_FAULT_PARAMS[self.kind].get(name, default)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "onset_ts": self.onset_ts,
            "duration_s": self.duration_s,
            "params": dict(self.params),
        }


def fault_from_config(cfg: FaultConfig, start_ts: int) -> FaultSpec:
    onset = start_ts + int(round(cfg.onset_h * 3600 / MINUTE_S)) * MINUTE_S
    duration = max(MINUTE_S, int(round(cfg.duration_h * 3600 / MINUTE_S)) * MINUTE_S)
    return FaultSpec(cfg.kind, cfg.target, onset, duration, dict(cfg.params))


# Wire order and per-column formats for the telemetry CSV. A fixed printf
# pass is ~4x faster than DataFrame.to_csv and pins the byte format.
_TELEMETRY_FMT = "%s,%d" + ",%.2f" * 6 + ",%.3f" + ",%.2f,%.2f" + ",%d\n"


def _telemetry_lines(cols: list) -> map:
    # node_id is a plain list; numeric columns are numpy arrays
    return map(
        _TELEMETRY_FMT.__mod__,
        zip(*[c if isinstance(c, list) else c.tolist() for c in cols]),
    )


class _MemoryTelemetrySink:
    def __init__(self):
        self.batches: list[list] = []

    def write_columns(self, cols: list):
        self.batches.append(cols)

    def to_frame(self) -> pd.DataFrame:
        from .node import TELEMETRY_COLUMNS

        if not self.batches:
            return pd.DataFrame(columns=list(TELEMETRY_COLUMNS))
        node_col = [nid for b in self.batches for nid in b[0]]
        merged = [node_col] + [
            np.concatenate([b[i] for b in self.batches]) for i in range(1, len(TELEMETRY_COLUMNS))
        ]
        return pd.DataFrame(dict(zip(TELEMETRY_COLUMNS, merged)))

    def dump_csv(self, path: Path):
        from .node import TELEMETRY_COLUMNS

        with open(path, "w") as fh:
            fh.write(",".join(TELEMETRY_COLUMNS) + "\n")
            for cols in self.batches:
                fh.writelines(_telemetry_lines(cols))


class _CsvTelemetrySink:
    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        from .node import TELEMETRY_COLUMNS

        with open(self.path, "w") as fh:
            fh.write(",".join(TELEMETRY_COLUMNS) + "\n")

    def write_columns(self, cols: list):
        with open(self.path, "a") as fh:
            fh.writelines(_telemetry_lines(cols))

    def dump_csv(self, path: Path):
        pass  # already streamed to self.path


class NodeSim:
    """Per-node mutable simulation state advanced chunk by chunk."""

    def __init__(self, node_id: str, idx: int, scenario: Scenario):
        self.node_id = node_id
        self.idx = idx
        cfg = scenario.node
        self.cache = CacheState(cfg.cache_capacity_bytes, cfg.deletion_threshold)
        self.server_id: str | None = None
        self.counters = {
            "spl_generated": 0,
            "spl_stored": 0,
            "spl_deleted": 0,
            "audio_generated": 0,
            "audio_stored": 0,
            "audio_deleted": 0,
            "status_attempted": 0,
            "status_delivered": 0,
            "supervisor_restarts": 0,
            "server_switches": 0,
        }
        link = scenario.link
        self.strength = link.baseline_strength_pct
        self.quality = link.baseline_quality_pct
        self.cpu1 = _BASE_CPU
        self.cpu15 = _BASE_CPU
        self.ram_noise = 0.0
        self.first_deletion_ts: int | None = None


class World:
    def __init__(self, scenario: Scenario, seed: int | None = None,
                 out_dir: str | Path | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.clock = scenario.start_ts
        self.nodes = [NodeSim(nid, i, scenario) for i, nid in enumerate(scenario.node_ids)]
        self.servers = [ServerState("A"), ServerState("B")]
        for node in self.nodes:
            node.server_id = assign_server(node.node_id, self.servers).server_id
        self.out_dir = Path(out_dir) if out_dir else None
        if scenario.store_fidelity == "spl_bytes" and self.out_dir is None:
            raise ScenarioError("store.fidelity", "spl_bytes runs need an output directory at build")
        store_root = (self.out_dir / "store") if self.out_dir else None
        self.store = PersistentStore(store_root, fidelity=scenario.store_fidelity)
        if self.out_dir:
            self.telemetry = _CsvTelemetrySink(self.out_dir / "telemetry.csv")
        else:
            self.telemetry = _MemoryTelemetrySink()
        self.faults: list[FaultSpec] = [
            fault_from_config(cfg, scenario.start_ts) for cfg in scenario.faults
        ]
        self.events: list[dict] = []
        self._announced: set[tuple] = set()
        self._synth: _SplSynth | None = None

    def initial_digest(self) -> str:
        payload = json.dumps(
            {
                "scenario": self.scenario.name,
                "sha256": self.scenario.source_sha256,
                "seed": self.seed,
                "nodes": self.scenario.node_ids,
                "fidelity": self.scenario.store_fidelity,
                "faults": [f.as_dict() for f in self.faults],
            },
            sort_keys=True,
        ).encode()
        return hashlib.sha256(payload).hexdigest()

    def _rng(self, node_idx: int, chunk_idx: int, stream: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(node_idx, chunk_idx, stream))
        return np.random.default_rng(seq)

    def node_faults(self, node_id: str, kind: str) -> list[FaultSpec]:
        return [f for f in self.faults if f.target == node_id and f.kind == kind]

    def server_down_windows(self, server_id: str) -> list[tuple[int, int]]:
        windows = []
        for f in self.faults:
            if f.kind == "server_outage" and f.target in (server_id, "network"):
                windows.append((f.onset_ts, f.end_ts))
        return windows


def build_world(scenario: Scenario, seed: int | None = None, out_dir=None) -> World:
    """Spin up a world with healthy baselines: link values at their configured
    baselines, tmp at ~0.1%, caches empty, both servers up."""
    if scenario.node_count < 1:
        raise ScenarioError("fleet.nodes", "need at least one node")
    return World(scenario, seed=seed, out_dir=out_dir)


def inject_fault(world: World, fault: FaultSpec) -> None:
    """Queue a fault. Targets must exist and onset must not precede the clock."""
    if fault.kind not in DEFAULT_FAULT_PARAMS:
        raise DomainError(f"unknown fault kind {fault.kind!r}")
    if fault.kind == "server_outage":
        if fault.target not in ("A", "B", "network"):
            raise DomainError(f"unknown server target {fault.target!r}")
    elif fault.target not in set(world.scenario.node_ids):
        raise DomainError(f"unknown node id {fault.target!r}")
    if fault.onset_ts < world.clock:
        raise DomainError("fault onset precedes the world clock")
    if fault.duration_s <= 0:
        raise DomainError("fault duration must be positive")
    world.faults.append(fault)


def world_event(world: World, ts: int, event: str, target: str, detail: str):
    world.events.append({"ts": int(ts), "event": event, "target": target, "detail": detail})


# -- per-chunk dynamics -------------------------------------------------------


def _window_mask(grid_ts: np.ndarray, faults: list[FaultSpec]) -> np.ndarray:
    mask = np.zeros(grid_ts.size, dtype=bool)
    for f in faults:
        mask |= (grid_ts >= f.onset_ts) & (grid_ts < f.end_ts)
    return mask


def _ar1(noise: np.ndarray, last: float, mu: float, sigma: float, revert: float) -> np.ndarray:
    """Mean-reverting walk continued from ``last``; exact across segments."""
    drive = noise * (sigma * revert) + revert * mu
    out, _ = lfilter([1.0], [1.0, -(1.0 - revert)], drive, zi=[(1.0 - revert) * last])
    return out


def _node_dynamics(world: World, node: NodeSim, chunk_start: int, offset_min: int,
                   minutes: int, chunk_idx: int) -> dict:
    """All fault- and noise-driven value arrays for one node over part of a
    chunk. Random draws are always full-chunk sized and sliced at the offset,
    so resuming mid-chunk replays the identical stream."""
    sc = world.scenario
    period = sc.node.telemetry_period_s
    spm = MINUTE_S // period
    full_min = CHUNK_S // MINUTE_S
    full_slots = full_min * spm
    lo, hi = offset_min, offset_min + minutes
    slo, shi = offset_min * spm, (offset_min + minutes) * spm
    n_slots = minutes * spm

    min_ts = chunk_start + MINUTE_S * np.arange(lo, hi, dtype=np.int64)
    slot_ts = chunk_start + period * np.arange(slo, shi, dtype=np.int64)

    power_faults = world.node_faults(node.node_id, "power_failure")
    powered_min = ~_window_mask(min_ts, power_faults)
    powered_slot = ~_window_mask(slot_ts, power_faults)
    ap_up_min = ~_window_mask(min_ts, world.node_faults(node.node_id, "ap_outage"))

    # Wi-Fi walk around baselines, minute resolution.
    wifi_gen = world._rng(node.idx, chunk_idx, _STREAM_WIFI)
    wifi_noise = wifi_gen.standard_normal((2, full_min))
    strength = _ar1(wifi_noise[0, lo:hi], node.strength, sc.link.baseline_strength_pct,
                    sc.link.walk_sigma, sc.link.walk_revert)
    quality = _ar1(wifi_noise[1, lo:hi], node.quality, sc.link.baseline_quality_pct,
                   sc.link.walk_sigma, sc.link.walk_revert)
    if minutes:
        node.strength = float(strength[-1])
        node.quality = float(quality[-1])

    # Degradation faults pull the baselines down with a ramp-in.
    for f in world.node_faults(node.node_id, "wifi_degradation"):
        ramp_s = max(MINUTE_S, int(float(f.param("ramp_h")) * 3600))
        active = (min_ts >= f.onset_ts) & (min_ts < f.end_ts)
        frac = np.clip((min_ts - f.onset_ts) / ramp_s, 0.0, 1.0)
        quality = quality - np.where(active, frac * float(f.param("quality_drop_pct")), 0.0)
        strength = strength - np.where(active, frac * float(f.param("strength_drop_pct")), 0.0)
    strength = np.clip(strength, 0.0, 100.0)
    quality = np.clip(quality, 0.0, 100.0)

    # TMP ramp: RAM-disk usage climbs to 100% and holds, clears at fault end.
    tmp = np.full(minutes, _BASE_TMP)
    for f in world.node_faults(node.node_id, "tmp_leak"):
        rate = float(f.param("rate_pct_per_h"))
        active = (min_ts >= f.onset_ts) & (min_ts < f.end_ts)
        ramp = _BASE_TMP + rate * (min_ts - f.onset_ts) / 3600.0
        tmp = np.where(active, np.minimum(ramp, 100.0), tmp)
    tmp[~powered_min] = _BASE_TMP  # RAM disk clears without power

    # Crash windows keep a process down; the supervisor keeps restarting it
    # every minute inside the window.
    capture_up = np.ones(minutes, dtype=bool)
    procs_delta = np.zeros(minutes, dtype=np.int64)
    for f in world.node_faults(node.node_id, "script_crash"):
        window = (min_ts >= f.onset_ts) & (min_ts < f.end_ts)
        procs_delta -= window.astype(np.int64)
        if str(f.param("process", "capture")) == "capture":
            capture_up &= ~window
        node.counters["supervisor_restarts"] += int(window.sum())

    # Memory leaks saw-tooth against the supervisor's RAM rule.
    ram_leak_slot = np.zeros(n_slots)
    for f in world.node_faults(node.node_id, "memory_leak"):
        rate = float(f.param("rate_pct_per_h"))
        headroom = 25.0 - 2.0  # the leaking process idles ~2% short of the rule
        period_s = headroom / rate * 3600.0 + 600.0
        active = (slot_ts >= f.onset_ts) & (slot_ts < f.end_ts)
        phase = np.mod((slot_ts - f.onset_ts).astype(float), period_s)
        leak = np.minimum(phase * rate / 3600.0, headroom + 5.0)
        ram_leak_slot = np.where(active, leak, ram_leak_slot)
        node.counters["supervisor_restarts"] += int(
            np.sum(active[1:] & (np.diff(phase) < 0))
        )

    capture_ok = powered_min & capture_up & (tmp < 100.0)

    # CPU/RAM noise at slot resolution.
    cpu_gen = world._rng(node.idx, chunk_idx, _STREAM_CPU)
    cpu_noise = cpu_gen.standard_normal((3, full_slots))
    cpu1 = _ar1(cpu_noise[0, slo:shi], node.cpu1, _BASE_CPU, 4.0, 0.15)
    ram_noise = _ar1(cpu_noise[1, slo:shi], node.ram_noise, 0.0, 1.2, 0.1)
    temp_noise = cpu_noise[2, slo:shi] * 0.6
    alpha = period / 900.0
    cpu15, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], cpu1, zi=[(1.0 - alpha) * node.cpu15])
    if n_slots:
        node.cpu1 = float(cpu1[-1])
        node.cpu15 = float(cpu15[-1])
        node.ram_noise = float(ram_noise[-1])

    hours_since_start = (slot_ts - sc.start_ts) / 3600.0
    varlog = _VARLOG_FLOOR_PCT + np.mod(
        _VARLOG_RATE_PCT_PER_H * hours_since_start + 7.0 * node.idx, _VARLOG_WRAP_PCT
    )

    snippet_gen = world._rng(node.idx, chunk_idx, _STREAM_SNIPPETS)
    plan = plan_snippets(snippet_gen, float(chunk_start), float(CHUNK_S), sc.node.snippet_gap_s)
    audio_starts: dict[int, list[int]] = {}
    for start_s, _ in plan:
        m = int((start_s - chunk_start) // MINUTE_S)
        if lo <= m < hi:
            audio_starts.setdefault(m - lo, []).append(int(start_s))

    p_link = np.where(
        powered_min & ap_up_min,
        link_success_prob(quality, sc.link.q0, sc.link.s),
        0.0,
    )
    upload_gen = world._rng(node.idx, chunk_idx, _STREAM_UPLOADS)
    upload_draws = upload_gen.random((full_min, sc.node.attempts_per_min))
    successes = (upload_draws[lo:hi] < p_link[:, None]).sum(axis=1)

    status_gen = world._rng(node.idx, chunk_idx, _STREAM_STATUS)
    status_draws = status_gen.random(full_slots)[slo:shi]

    return {
        "min_ts": min_ts,
        "slot_ts": slot_ts,
        "slots_per_min": spm,
        "powered_min": powered_min,
        "powered_slot": powered_slot,
        "ap_up_min": ap_up_min,
        "strength": strength,
        "quality": quality,
        "tmp": tmp,
        "capture_ok": capture_ok,
        "procs_delta": procs_delta,
        "cpu1": cpu1,
        "cpu15": cpu15,
        "temp_noise": temp_noise,
        "ram_noise": ram_noise,
        "ram_leak_slot": ram_leak_slot,
        "varlog": varlog,
        "audio_starts": audio_starts,
        "successes": successes,
        "status_draws": status_draws,
    }


def _run_minute_loop(world: World, node: NodeSim, dyn: dict) -> tuple[np.ndarray, np.ndarray]:
    """Capture, uploads, deletion policy, and server failover, minute by
    minute. Returns (data_usage_pct, link_ok) arrays for telemetry."""
    sc = world.scenario
    cache = node.cache
    counters = node.counters
    node_id = node.node_id
    spl_bytes = sc.node.spl_file_bytes
    audio_bytes = sc.node.audio_file_bytes
    threshold_bytes = cache.deletion_threshold * cache.capacity_bytes
    store = world.store
    synth = world._synth
    cache_add = cache.add
    pop_oldest = cache.pop_oldest
    receive = store.receive

    min_ts = dyn["min_ts"]
    minutes = min_ts.size
    ts_list = min_ts.tolist()
    capture_ok = dyn["capture_ok"].tolist()
    online = (dyn["powered_min"] & dyn["ap_up_min"]).tolist()
    successes = dyn["successes"].tolist()
    audio_starts = dyn["audio_starts"]

    server_down = {s.server_id: world.server_down_windows(s.server_id) for s in world.servers}
    any_server_faults = any(server_down.values())

    def server_up_at(server_id: str, ts: int) -> bool:
        return not any(onset <= ts < end for onset, end in server_down[server_id])

    usage = [0] * minutes
    link_ok = np.zeros(minutes, dtype=bool)

    for m in range(minutes):
        ts = ts_list[m]
        if capture_ok[m]:
            cache_add(KIND_SPL, f"spl_{node_id}_{ts}", spl_bytes, ts)
            counters["spl_generated"] += 1
            if m in audio_starts:
                for astart in audio_starts[m]:
                    cache_add(KIND_AUDIO, f"aud_{node_id}_{astart}", audio_bytes, astart)
                    counters["audio_generated"] += 1

        if online[m]:
            server_ok = True
            if any_server_faults:
                if not server_up_at(node.server_id, ts):
                    other = "B" if node.server_id == "A" else "A"
                    if server_up_at(other, ts):
                        node.server_id = other
                        counters["server_switches"] += 1
                        world_event(world, ts, "server_switch", node_id, f"to {other}")
                server_ok = server_up_at(node.server_id, ts)
            if server_ok:
                link_ok[m] = True
                n = successes[m]
                recv_ts = ts + MINUTE_S  # acks land by the end of the minute
                while n > 0:
                    entry = pop_oldest(KIND_SPL) or pop_oldest(KIND_AUDIO)
                    if entry is None:
                        break
                    if entry.kind == KIND_SPL:
                        counters["spl_stored"] += 1
                        payload = fname = None
                        if synth is not None:
                            payload = synth.minute_tar(node, entry.created_at)
                            fname = f"{node_id}_{entry.created_at}.tar"
                        receive(
                            KIND_SPL, node_id, entry.entry_id, entry.created_at, recv_ts,
                            entry.size_bytes if payload is None else len(payload),
                            payload=payload, file_name=fname,
                        )
                    else:
                        counters["audio_stored"] += 1
                        receive(
                            KIND_AUDIO, node_id, entry.entry_id, entry.created_at,
                            recv_ts, entry.size_bytes,
                        )
                    n -= 1

        if cache.used_bytes >= threshold_bytes:
            if node.first_deletion_ts is None:
                node.first_deletion_ts = ts
                world_event(world, ts, "deletion_policy_first_enactment", node_id, "")
            for entry in tick_deletion_policy(cache):
                if entry.kind == KIND_SPL:
                    counters["spl_deleted"] += 1
                else:
                    counters["audio_deleted"] += 1

        usage[m] = cache.used_bytes

    return np.array(usage) * (100.0 / cache.capacity_bytes), link_ok


def _emit_telemetry(world: World, node: NodeSim, dyn: dict, usage_pct: np.ndarray,
                    link_ok: np.ndarray) -> list | None:
    """Status snapshots for every 3 s slot whose upload succeeded; failed
    slots are dropped, never retried late. Returns columns in the wire order
    of the telemetry CSV."""
    sc = world.scenario
    spm = dyn["slots_per_min"]
    if dyn["slot_ts"].size == 0:
        return None
    quality_slot = np.repeat(dyn["quality"], spm)
    p_slot = np.where(
        np.repeat(link_ok, spm) & dyn["powered_slot"],
        link_success_prob(quality_slot, sc.link.q0, sc.link.s),
        0.0,
    )
    received = dyn["status_draws"] < p_slot
    node.counters["status_attempted"] += int(dyn["powered_slot"].sum())
    node.counters["status_delivered"] += int(received.sum())
    if not received.any():
        return None

    cpu1 = np.clip(dyn["cpu1"][received], 0.0, 100.0)
    cpu15 = np.clip(dyn["cpu15"][received], 0.0, 100.0)
    ram = np.clip(_BASE_RAM + dyn["ram_noise"][received] + dyn["ram_leak_slot"][received], 0.0, 100.0)
    temp = _BASE_TEMP + 0.25 * (cpu1 - _BASE_CPU) + dyn["temp_noise"][received]
    n = int(received.sum())
    return [
        [node.node_id] * n,
        dyn["slot_ts"][received],
        cpu1,
        cpu15,
        temp,
        ram,
        np.repeat(dyn["strength"], spm)[received],
        quality_slot[received],
        np.repeat(usage_pct, spm)[received],
        np.repeat(dyn["tmp"], spm)[received],
        dyn["varlog"][received],
        _BASE_PROCS + np.repeat(dyn["procs_delta"], spm)[received],
    ]


class _SplSynth:
    """Plausible per-minute SPL content for spl_bytes runs: a diurnal dBA
    profile with noise and occasional loud events, spread over a fixed band
    shape. Deterministic per (seed, node, minute) regardless of upload time."""

    def __init__(self, world: World):
        self.world = world
        shape = np.linspace(2.0, -6.0, 30)  # gentle high-frequency rolloff
        self.tob_shape = shape - 10.0 * math.log10(np.sum(10.0 ** (shape / 10.0)))
        oshape = np.linspace(1.0, -4.0, 10)
        self.oct_shape = oshape - 10.0 * math.log10(np.sum(10.0 ** (oshape / 10.0)))

    def minute_tar(self, node: NodeSim, minute_ts: int) -> bytes:
        seq = np.random.SeedSequence(
            entropy=self.world.seed, spawn_key=(node.idx, minute_ts, _STREAM_SYNTH)
        )
        rng = np.random.default_rng(seq)
        hour_frac = (minute_ts % 86400) / 3600.0
        base = 52.0 + 0.5 * node.idx + 8.0 * math.sin(2 * math.pi * (hour_frac - 9.0) / 24.0)
        minute_dba = base + rng.normal(0.0, 1.5)
        if rng.random() < 0.05:
            minute_dba += rng.uniform(8.0, 18.0)
        sec_dba = minute_dba + rng.normal(0.0, 0.8, 60)
        fast_dba = np.repeat(sec_dba, 8) + rng.normal(0.0, 0.3, 480)
        start_ms = minute_ts * 1000
        slow_ts = start_ms + 1000 * np.arange(60, dtype=np.int64)
        fast_ts = start_ms + 125 * np.arange(480, dtype=np.int64)
        return acoustics.minute_tar_from_arrays(
            slow_ts, self._level_matrix(sec_dba),
            fast_ts, self._level_matrix(fast_dba),
            start_ms,
        )

    def _level_matrix(self, dba: np.ndarray) -> np.ndarray:
        dbz = dba + 2.2
        cols = np.empty((dba.size, 43))
        cols[:, 0] = dbz
        cols[:, 1] = dba
        cols[:, 2] = dba + 1.1
        cols[:, 3:13] = dbz[:, None] + self.oct_shape[None, :]
        cols[:, 13:43] = dbz[:, None] + self.tob_shape[None, :]
        return np.round(np.clip(cols, 32.0, 120.0), 2)


def advance(world: World, until_ts: int) -> list[dict]:
    """Run the world to ``until_ts`` (clamped to the horizon, quantized to the
    minute grid) and return the events appended while doing so."""
    if until_ts < world.clock:
        raise DomainError("cannot advance backwards")
    until_ts = min(until_ts, world.scenario.end_ts)
    until_ts -= (until_ts - world.scenario.start_ts) % MINUTE_S
    events_before = len(world.events)

    if world.scenario.store_fidelity == "spl_bytes" and world._synth is None:
        world._synth = _SplSynth(world)

    for fault in world.faults:
        key = (fault.kind, fault.target, fault.onset_ts)
        if world.clock <= fault.onset_ts < until_ts and key not in world._announced:
            world._announced.add(key)
            world_event(world, fault.onset_ts, "fault_onset", fault.target, fault.kind)
            world_event(world, min(fault.end_ts, world.scenario.end_ts), "fault_offset",
                        fault.target, fault.kind)

    start_ts = world.scenario.start_ts
    while world.clock < until_ts:
        chunk_idx = (world.clock - start_ts) // CHUNK_S
        chunk_start = start_ts + chunk_idx * CHUNK_S
        seg_end = min(chunk_start + CHUNK_S, until_ts)
        offset_min = (world.clock - chunk_start) // MINUTE_S
        minutes = (seg_end - world.clock) // MINUTE_S
        batches = []
        for node in world.nodes:
            dyn = _node_dynamics(world, node, chunk_start, offset_min, minutes, chunk_idx)
            usage_pct, link_ok = _run_minute_loop(world, node, dyn)
            cols = _emit_telemetry(world, node, dyn, usage_pct, link_ok)
            if cols is not None:
                batches.append(cols)
        if batches:
            node_col = [nid for b in batches for nid in b[0]]
            merged = [node_col] + [
                np.concatenate([b[i] for b in batches]) for i in range(1, len(batches[0]))
            ]
            world.telemetry.write_columns(merged)
        world.store.flush()
        world.clock = seg_end

    world.events.sort(key=lambda e: (e["ts"], e["event"], e["target"]))
    return world.events[events_before:]


@dataclass(frozen=True)
class RunArtifacts:
    run_dir: Path
    manifest_path: Path
    telemetry_csv: Path
    store_root: Path
    faults_path: Path


def conservation_audit(world: World) -> dict:
    """Every generated file is exactly one of stored, cached, or deleted by
    policy; reports per-node reconciliation."""
    per_node = {}
    all_ok = True
    for node in world.nodes:
        c = node.counters
        spl_cached = node.cache.count(KIND_SPL)
        audio_cached = node.cache.count(KIND_AUDIO)
        ok = (
            c["spl_generated"] == c["spl_stored"] + c["spl_deleted"] + spl_cached
            and c["audio_generated"] == c["audio_stored"] + c["audio_deleted"] + audio_cached
        )
        all_ok &= ok
        per_node[node.node_id] = {
            **c,
            "spl_cached_end": spl_cached,
            "audio_cached_end": audio_cached,
            "first_deletion_ts": node.first_deletion_ts,
            "reconciles": ok,
        }
    return {"nodes": per_node, "reconciles": all_ok}


def export_run(world: World, out_dir: str | Path | None = None) -> RunArtifacts:
    """Write the persistent store tree, telemetry log, fault ledger, and the
    seed manifest. Same (scenario, seed) reproduces every byte; nothing here
    reads the wall clock."""
    run_dir = Path(out_dir) if out_dir else world.out_dir
    if run_dir is None:
        raise DomainError("no output directory given at build or export time")
    run_dir.mkdir(parents=True, exist_ok=True)

    telemetry_csv = run_dir / "telemetry.csv"
    world.telemetry.dump_csv(telemetry_csv)

    if world.store.root is None:
        world.store.root = run_dir / "store"
    world.store.flush()
    (run_dir / "store").mkdir(parents=True, exist_ok=True)

    faults_path = run_dir / "faults.json"
    faults_path.write_text(
        json.dumps(
            {"faults": [f.as_dict() for f in world.faults], "events": world.events},
            indent=2,
            sort_keys=True,
        )
    )

    manifest = {
        "scenario": world.scenario.name,
        "scenario_sha256": world.scenario.source_sha256,
        "seed": world.seed,
        "initial_digest": world.initial_digest(),
        "start_ts": world.scenario.start_ts,
        "horizon_hours": world.scenario.horizon_hours,
        "clock_ts": world.clock,
        "nodes": world.scenario.node_ids,
        "store_fidelity": world.scenario.store_fidelity,
        "alert_rules": [dict(r) for r in world.scenario.alert_rules],
        "conservation": conservation_audit(world),
        "artifacts": {
            "telemetry": "telemetry.csv",
            "store": "store",
            "faults": "faults.json",
        },
    }
    manifest_path = run_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return RunArtifacts(
        run_dir=run_dir,
        manifest_path=manifest_path,
        telemetry_csv=telemetry_csv,
        store_root=run_dir / "store",
        faults_path=faults_path,
    )
