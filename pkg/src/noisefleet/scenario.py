"""Scenario files: the declarative description a simulation runs from.

TOML with nested tables. Times inside a scenario are hours relative to the
scenario start, which must sit on a UTC hour boundary so yield hours align
with store dates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ScenarioError

FAULT_KINDS = (
    "wifi_degradation",
    "ap_outage",
    "power_failure",
    "tmp_leak",
    "memory_leak",
    "script_crash",
    "server_outage",
)

SERVER_IDS = ("A", "B")

DEFAULT_FAULT_PARAMS = {
    "tmp_leak": {"rate_pct_per_h": 100.0 / 72.0},
    "wifi_degradation": {"quality_drop_pct": 60.0, "strength_drop_pct": 40.0, "ramp_h": 2.0},
    "memory_leak": {"process": "uploader", "rate_pct_per_h": 5.0},
    "script_crash": {"process": "capture"},
    "ap_outage": {},
    "power_failure": {},
    "server_outage": {},
}


@dataclass(frozen=True)
class LinkConfig:
    baseline_strength_pct: float = 80.0
    baseline_quality_pct: float = 85.0
    q0: float = 30.0
    s: float = 8.0
    walk_sigma: float = 1.5
    walk_revert: float = 0.15


@dataclass(frozen=True)
class NodeConfig:
    cache_capacity_bytes: int = 12_000_000_000
    spl_file_bytes: int = 150_000
    audio_file_bytes: int = 500_000
    status_bytes: int = 1_000
    telemetry_period_s: int = 3
    snippet_gap_s: tuple[float, float] = (5.0, 15.0)
    attempts_per_min: int = 12
    deletion_threshold: float = 0.95


@dataclass(frozen=True)
class FaultConfig:
    kind: str
    target: str
    onset_h: float
    duration_h: float
    params: dict = field(default_factory=dict)

    def param(self, name: str):
        if name in self.params:
            return self.params[name]
        return DEFAULT_FAULT_PARAMS[self.kind][name]


@dataclass(frozen=True)
class Scenario:
    name: str
    start_ts: int
    horizon_hours: int
    seed: int
    node_count: int
    node_prefix: str
    link: LinkConfig
    node: NodeConfig
    store_fidelity: str
    faults: tuple[FaultConfig, ...]
    alert_rules: tuple[dict, ...]
    source_sha256: str = ""

    @property
    def node_ids(self) -> list[str]:
        width = max(2, len(str(self.node_count)))
        return [f"{self.node_prefix}{i + 1:0{width}d}" for i in range(self.node_count)]

    @property
    def horizon_s(self) -> int:
        return self.horizon_hours * 3600

    @property
    def end_ts(self) -> int:
        return self.start_ts + self.horizon_s


def _require(table: dict, field_path: str, key: str, default=None):
    if key in table:
        return table[key]
    if default is not None:
        return default
    raise ScenarioError(f"{field_path}.{key}", "missing required field")


def _parse_start(raw, field_path: str) -> int:
    if isinstance(raw, datetime):
        dt = raw if raw.tzinfo else raw.replace(tzinfo=timezone.utc)
    elif isinstance(raw, str):
        try:
            dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
        except ValueError as exc:
            raise ScenarioError(field_path, f"bad timestamp {raw!r}: {exc}") from exc
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
    elif isinstance(raw, int):
        dt = datetime.fromtimestamp(raw, tz=timezone.utc)
    else:
        raise ScenarioError(field_path, f"unsupported start type {type(raw).__name__}")
    ts = int(dt.timestamp())
    if ts % 3600 != 0:
        raise ScenarioError(field_path, "scenario start must be on a UTC hour boundary")
    return ts


def parse_scenario(data: dict, source_sha256: str = "") -> Scenario:
    sc = data.get("scenario", {})
    name = _require(sc, "scenario", "name")
    start_ts = _parse_start(_require(sc, "scenario", "start"), "scenario.start")
    if "horizon_hours" in sc:
        horizon_hours = int(sc["horizon_hours"])
    elif "horizon_days" in sc:
        horizon_hours = int(sc["horizon_days"] * 24)
    else:
        raise ScenarioError("scenario.horizon_hours", "missing required field")
    if horizon_hours <= 0:
        raise ScenarioError("scenario.horizon_hours", "horizon must be positive")
    seed = int(sc.get("seed", 0))

    fleet = data.get("fleet", {})
    node_count = int(_require(fleet, "fleet", "nodes"))
    if node_count < 1:
        raise ScenarioError("fleet.nodes", "need at least one node")
    node_prefix = str(fleet.get("node_prefix", "N"))

    link_table = data.get("link", {})
    try:
        link = LinkConfig(**link_table)
    except TypeError as exc:
        raise ScenarioError("link", f"unknown field: {exc}") from exc

    node_table = dict(data.get("node", {}))
    if "snippet_gap_s" in node_table:
        gap = node_table["snippet_gap_s"]
        if not (isinstance(gap, (list, tuple)) and len(gap) == 2 and 0 < gap[0] <= gap[1]):
            raise ScenarioError("node.snippet_gap_s", "expected [low, high] with 0 < low <= high")
        node_table["snippet_gap_s"] = (float(gap[0]), float(gap[1]))
    try:
        node = NodeConfig(**node_table)
    except TypeError as exc:
        raise ScenarioError("node", f"unknown field: {exc}") from exc
    if node.cache_capacity_bytes <= 0:
        raise ScenarioError("node.cache_capacity_bytes", "must be positive")

    store_tbl = data.get("store", {})
    fidelity = store_tbl.get("fidelity", "index")
    if fidelity not in ("index", "spl_bytes"):
        raise ScenarioError("store.fidelity", f"unknown fidelity {fidelity!r}")

    node_ids = {f"{node_prefix}{i + 1:0{max(2, len(str(node_count)))}d}" for i in range(node_count)}
    faults = []
    for i, raw in enumerate(data.get("faults", [])):
        path = f"faults[{i}]"
        kind = _require(raw, path, "kind")
        if kind not in FAULT_KINDS:
            raise ScenarioError(f"{path}.kind", f"unknown fault kind {kind!r}")
        target = _require(raw, path, "target")
        if kind == "server_outage":
            if target not in SERVER_IDS and target != "network":
                raise ScenarioError(f"{path}.target", f"unknown server target {target!r}")
        elif target not in node_ids:
            raise ScenarioError(f"{path}.target", f"unknown node id {target!r}")
        onset_h = float(_require(raw, path, "onset_h"))
        duration_h = float(_require(raw, path, "duration_h"))
        if not 0 <= onset_h < horizon_hours:
            raise ScenarioError(f"{path}.onset_h", "onset outside the scenario horizon")
        if duration_h <= 0:
            raise ScenarioError(f"{path}.duration_h", "duration must be positive")
        params = dict(raw.get("params", {}))
        for key in params:
            if key not in DEFAULT_FAULT_PARAMS[kind]:
                raise ScenarioError(f"{path}.params.{key}", f"unknown param for {kind}")
        faults.append(FaultConfig(kind, target, onset_h, duration_h, params))

    alert_rules = tuple(dict(r) for r in data.get("alerts", []))

    return Scenario(
        name=name,
        start_ts=start_ts,
        horizon_hours=horizon_hours,
        seed=seed,
        node_count=node_count,
        node_prefix=node_prefix,
        link=link,
        node=node,
        store_fidelity=fidelity,
        faults=tuple(faults),
        alert_rules=alert_rules,
        source_sha256=source_sha256,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    raw = path.read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(str(path), f"not valid TOML: {exc}") from exc
    return parse_scenario(data, source_sha256=hashlib.sha256(raw).hexdigest())
