"""Two-server ingestion tier: upload handling, load assignment, flushing.

A positive ack is returned only after the item is durably held in the
server's local cache; the cache then flushes to the persistent store on a
60 s cadence. Dedup is by item_id end to end, so a client retry after a lost
ack is idempotent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .store import PersistentStore

FLUSH_PERIOD_S = 60
VALID_KINDS = ("spl", "audio", "status")


def make_item_id(sensor_id: str, kind: str, ts: int) -> str:
    """Stable dedup key; retries of the same logical item collide on it."""
    digest = hashlib.sha1(f"{sensor_id}|{kind}|{ts}".encode()).hexdigest()
    return digest[:20]


@dataclass(frozen=True)
class UploadRequest:
    kind: str
    sensor_id: str
    ts: int
    item_id: str
    size_bytes: int
    payload: bytes | None = None
    file_name: str | None = None


@dataclass(frozen=True)
class Ack:
    status: str  # "ok" | "error"
    item_id: str
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class CachedItem:
    request: UploadRequest
    recv_ts: int


@dataclass
class ServerState:
    server_id: str
    up: bool = True
    store_online: bool = True
    local_cache: dict[str, CachedItem] = field(default_factory=dict)
    flushed_ids: set[str] = field(default_factory=set)
    assigned_nodes: set[str] = field(default_factory=set)


def _validate(request: UploadRequest) -> Optional[str]:
    if request.kind not in VALID_KINDS:
        return f"unknown kind {request.kind!r}"
    if not request.sensor_id:
        return "missing sensor id"
    if not request.item_id:
        return "missing item id"
    if request.size_bytes < 0:
        return "negative size"
    return None


def handle_upload(server: ServerState, request: UploadRequest, now_ts: int) -> Optional[Ack]:
    """Accept one upload. Returns None when the server is down (no ack at
    all); a malformed request gets a rejection ack; duplicates ack ok
    without rewriting."""
    if not server.up:
        return None
    problem = _validate(request)
    if problem:
        return Ack(status="error", item_id=request.item_id, reason=problem)
    if request.item_id in server.local_cache or request.item_id in server.flushed_ids:
        return Ack(status="ok", item_id=request.item_id, reason="duplicate")
    server.local_cache[request.item_id] = CachedItem(request=request, recv_ts=now_ts)
    return Ack(status="ok", item_id=request.item_id)


def flush_server(server: ServerState, store: PersistentStore) -> int:
    """Move locally cached items into the persistent store; a flush while the
    storage backend is offline is a no-op and items keep accumulating."""
    if not server.up or not server.store_online:
        return 0
    moved = 0
    for item_id in sorted(server.local_cache):
        cached = server.local_cache[item_id]
        req = cached.request
        store.receive(
            kind=req.kind,
            sensor_id=req.sensor_id,
            item_id=req.item_id,
            ts=req.ts,
            recv_ts=cached.recv_ts,
            size_bytes=req.size_bytes,
            payload=req.payload,
            file_name=req.file_name,
        )
        server.flushed_ids.add(item_id)
        del server.local_cache[item_id]
        moved += 1
    return moved


class AssignmentError(Exception):
    """No live server is available; the node retries later."""


def assign_server(node_id: str, servers: list[ServerState]) -> ServerState:
    """Sticky, deterministic balance: a node keeps its live server across
    reconnects; otherwise it joins the least-assigned live server, ties
    broken by lowest server id."""
    live = [s for s in servers if s.up]
    if not live:
        raise AssignmentError("all ingestion servers down")
    for server in servers:
        if node_id in server.assigned_nodes:
            if server.up:
                return server
            server.assigned_nodes.discard(node_id)
    target = min(live, key=lambda s: (len(s.assigned_nodes), s.server_id))
    target.assigned_nodes.add(node_id)
    return target
