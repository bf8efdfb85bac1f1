"""Minimal HTTP binding for the ingestion tier.

POST /ingest/{spl|audio|status} with the raw wire payload as the body and
metadata in headers (X-Sensor-Id, X-Timestamp, X-Item-Id). Response is JSON
{"status": "ok"|"error", "item_id": ...}. A downed server answers 503, which
clients treat the same as no ack.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .ingest import ServerState, UploadRequest, handle_upload, make_item_id


class _Handler(BaseHTTPRequestHandler):
    server_version = "noisefleet-ingest/0.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _reply(self, code: int, body: dict):
        data = json.dumps(body).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        parts = self.path.strip("/").split("/")
        if len(parts) != 2 or parts[0] != "ingest":
            self._reply(404, {"status": "error", "reason": "unknown endpoint"})
            return
        kind = parts[1]
        state: ServerState = self.server.state  # type: ignore[attr-defined]
        length = int(self.headers.get("Content-Length", "0"))
        payload = self.rfile.read(length) if length else b""
        sensor_id = self.headers.get("X-Sensor-Id", "")
        try:
            ts = int(self.headers.get("X-Timestamp", "0"))
        except ValueError:
            ts = 0
        item_id = self.headers.get("X-Item-Id") or make_item_id(sensor_id, kind, ts)
        request = UploadRequest(
            kind=kind,
            sensor_id=sensor_id,
            ts=ts,
            item_id=item_id,
            size_bytes=len(payload),
            payload=payload or None,
        )
        ack = handle_upload(state, request, now_ts=self.server.clock())  # type: ignore[attr-defined]
        if ack is None:
            self._reply(503, {"status": "error", "reason": "server down"})
            return
        body = {"status": ack.status, "item_id": ack.item_id}
        if ack.reason:
            body["reason"] = ack.reason
        self._reply(200 if ack.ok else 400, body)


class IngestHttpServer:
    """Serve one ingestion ServerState over loopback HTTP."""

    def __init__(self, state: ServerState, host: str = "127.0.0.1", port: int = 0, clock=lambda: 0):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.state = state  # type: ignore[attr-defined]
        self._httpd.clock = clock  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
