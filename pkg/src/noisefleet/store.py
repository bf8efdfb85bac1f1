"""Date-partitioned persistent store behind the ingestion tier.

Layout: ``<root>/{spl|audio|status}/<sensor_id>/<YYYY-MM-DD>/<file>``. A day
that has gone untouched for 24 h is collapsed into a single ``<date>.tar``
that replaces the directory; readers treat both forms identically.

Two fidelities: ``spl_bytes`` stores real minute tars (small scenarios,
fixtures), ``index`` stores one ``_index.csv`` per day listing the items a
simulated run received. Yield analysis reads either.
"""

from __future__ import annotations

import csv
import io
import tarfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .acoustics import is_readable_minute_file

INDEX_NAME = "_index.csv"
INDEX_HEADER = ["item_id", "ts", "recv_ts", "size_bytes", "status"]
KINDS = ("spl", "audio", "status")


_DAY_CACHE: dict[int, str] = {}


def day_of(ts: int) -> str:
    day = ts // 86400
    cached = _DAY_CACHE.get(day)
    if cached is None:
        cached = datetime.fromtimestamp(day * 86400, tz=timezone.utc).strftime("%Y-%m-%d")
        _DAY_CACHE[day] = cached
    return cached


def item_path(root: Path, kind: str, sensor_id: str, ts: int, file_name: str) -> Path:
    """Store path is a pure function of (kind, sensor, ts, name)."""
    return Path(root) / kind / sensor_id / day_of(ts) / file_name


@dataclass(frozen=True)
class StoredItem:
    item_id: str
    ts: int
    recv_ts: int
    size_bytes: int
    readable: bool


class PersistentStore:
    """Write-side store used by the ingestion servers.

    With no root yet, items buffer in memory and flush() is a no-op; export
    assigns the root and flushes. Payload-carrying items need a root up front.
    """

    def __init__(self, root: str | Path | None, fidelity: str = "index"):
        self.root = Path(root) if root is not None else None
        if fidelity not in ("index", "spl_bytes"):
            raise ValueError(f"unknown store fidelity {fidelity!r}")
        self.fidelity = fidelity
        # (kind, sensor, date) -> {item_id: row}; buffered until flush
        self._index: dict[tuple[str, str, str], dict[str, list]] = {}
        self._day_last_write: dict[tuple[str, str, str], int] = {}
        self._written_ids: set[str] = set()

    def receive(
        self,
        kind: str,
        sensor_id: str,
        item_id: str,
        ts: int,
        recv_ts: int,
        size_bytes: int,
        payload: bytes | None = None,
        file_name: str | None = None,
    ) -> bool:
        """Record one item; duplicates by item_id are dropped (returns False).

        With a payload the item becomes a real file in its day directory;
        without one it becomes a row in the day's index.
        """
        if recv_ts < ts:
            raise ValueError(f"item {item_id} received at {recv_ts} before generation {ts}")
        key = (kind, sensor_id, day_of(ts))
        if payload is not None:
            if self.root is None:
                raise ValueError("store has no root; cannot write payload bytes")
            if item_id in self._written_ids:
                return False
            path = item_path(self.root, kind, sensor_id, ts, file_name or f"{item_id}.bin")
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(payload)
            self._written_ids.add(item_id)
            self._day_last_write[key] = max(self._day_last_write.get(key, 0), recv_ts)
            return True
        day = self._index.setdefault(key, {})
        if item_id in day:
            return False
        day[item_id] = [item_id, ts, recv_ts, size_bytes, "ok"]
        self._day_last_write[key] = max(self._day_last_write.get(key, 0), recv_ts)
        return True

    def flush(self) -> None:
        """Write buffered day indexes to disk; buffered rows merge with any
        index already on disk (late receipts land in their generation day)."""
        if self.root is None:
            return
        fmt = "%s,%d,%d,%d,%s\n"
        for (kind, sensor, date), rows in self._index.items():
            day_dir = self.root / kind / sensor / date
            day_dir.mkdir(parents=True, exist_ok=True)
            path = day_dir / INDEX_NAME
            merged: dict[str, list] = {}
            if path.exists():
                for item in _read_index_bytes(path.read_bytes()):
                    merged[item.item_id] = [
                        item.item_id, item.ts, item.recv_ts, item.size_bytes,
                        "ok" if item.readable else "corrupt",
                    ]
            for item_id, row in rows.items():
                merged.setdefault(item_id, row)
            with path.open("w", newline="") as fh:
                fh.write(",".join(INDEX_HEADER) + "\n")
                ordered = sorted(merged.values(), key=lambda r: (r[1], r[0]))
                fh.writelines(map(fmt.__mod__, map(tuple, ordered)))
        self._index.clear()

    def last_write_ts(self, kind: str, sensor: str, date: str) -> int:
        return self._day_last_write.get((kind, sensor, date), 0)


def _read_index_bytes(data: bytes) -> list[StoredItem]:
    text = data.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != INDEX_HEADER:
        return []
    items = []
    for row in reader:
        if len(row) != 5:
            continue
        items.append(
            StoredItem(
                item_id=row[0],
                ts=int(row[1]),
                recv_ts=int(row[2]),
                size_bytes=int(row[3]),
                readable=row[4] == "ok",
            )
        )
    return items


def _items_from_files(files: dict[str, bytes], kind: str) -> list[StoredItem]:
    """Interpret a day's loose files: either an index or real minute tars."""
    if INDEX_NAME in files:
        return _read_index_bytes(files[INDEX_NAME])
    items = []
    for name, data in sorted(files.items()):
        stem = name.rsplit(".", 1)[0]
        try:
            ts = int(stem.rsplit("_", 1)[-1])
        except ValueError:
            ts = 0
        readable = is_readable_minute_file(data) if kind == "spl" else True
        items.append(
            StoredItem(item_id=stem, ts=ts, recv_ts=ts, size_bytes=len(data), readable=readable)
        )
    return items


def read_day(sensor_dir: Path, date: str, kind: str) -> list[StoredItem]:
    """Items for one day, whether the day is a directory or a day tar."""
    day_dir = sensor_dir / date
    day_tar = sensor_dir / f"{date}.tar"
    files: dict[str, bytes] = {}
    if day_dir.is_dir():
        for path in day_dir.iterdir():
            if path.is_file():
                files[path.name] = path.read_bytes()
    elif day_tar.is_file():
        with tarfile.open(day_tar, "r") as tar:
            for member in tar.getmembers():
                if member.isfile():
                    files[Path(member.name).name] = tar.extractfile(member).read()
    return _items_from_files(files, kind)


def list_days(root: Path, kind: str, sensor_id: str) -> list[str]:
    sensor_dir = Path(root) / kind / sensor_id
    if not sensor_dir.is_dir():
        return []
    days = set()
    for path in sensor_dir.iterdir():
        if path.is_dir():
            days.add(path.name)
        elif path.suffix == ".tar":
            days.add(path.stem)
    return sorted(days)


def list_sensors(root: Path, kind: str = "spl") -> list[str]:
    kind_dir = Path(root) / kind
    if not kind_dir.is_dir():
        return []
    return sorted(p.name for p in kind_dir.iterdir() if p.is_dir())


ARCHIVE_AFTER_S = 24 * 3600


def archive_stale_days(
    root: str | Path,
    now_ts: int,
    last_write_ts=None,
) -> list[str]:
    """Collapse every day directory untouched for 24 h into ``<date>.tar``.

    ``last_write_ts(kind, sensor, date)`` supplies the simulated write clock;
    without one, file mtimes decide. Days written within the trailing 24 h are
    skipped, so archiving never races a same-day write. Content-preserving:
    the tar holds exactly the directory's files. Returns archived day paths.
    """
    root = Path(root)
    archived = []
    for kind in KINDS:
        kind_dir = root / kind
        if not kind_dir.is_dir():
            continue
        for sensor_dir in sorted(p for p in kind_dir.iterdir() if p.is_dir()):
            for day_dir in sorted(p for p in sensor_dir.iterdir() if p.is_dir()):
                date = day_dir.name
                if last_write_ts is not None:
                    written = last_write_ts(kind, sensor_dir.name, date)
                else:
                    written = max(
                        (int(p.stat().st_mtime) for p in day_dir.iterdir() if p.is_file()),
                        default=0,
                    )
                if now_ts - written < ARCHIVE_AFTER_S:
                    continue
                tar_path = sensor_dir / f"{date}.tar"
                tmp_path = tar_path.with_suffix(".tar.partial")
                with tarfile.open(tmp_path, "w", format=tarfile.USTAR_FORMAT) as tar:
                    for path in sorted(day_dir.iterdir()):
                        if not path.is_file():
                            continue
                        data = path.read_bytes()
                        info = tarfile.TarInfo(path.name)
                        info.size = len(data)
                        info.mtime = written
                        info.mode = 0o644
                        info.uid = info.gid = 0
                        info.uname = info.gname = ""
                        tar.addfile(info, io.BytesIO(data))
                tmp_path.rename(tar_path)
                for path in day_dir.iterdir():
                    path.unlink()
                day_dir.rmdir()
                archived.append(f"{kind}/{sensor_dir.name}/{date}")
    return archived


class StoreCatalog:
    """Read-side view: readable SPL minute counts per (sensor, hour)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._counts: dict[tuple[str, int], int] = {}
        self._sensors: list[str] = []
        self._scan()

    def _scan(self):
        self._sensors = list_sensors(self.root, "spl")
        for sensor in self._sensors:
            sensor_dir = self.root / "spl" / sensor
            for date in list_days(self.root, "spl", sensor):
                for item in read_day(sensor_dir, date, "spl"):
                    if not item.readable:
                        continue
                    hour = item.ts - item.ts % 3600
                    key = (sensor, hour)
                    self._counts[key] = self._counts.get(key, 0) + 1

    @property
    def sensors(self) -> list[str]:
        return list(self._sensors)

    def readable_count(self, sensor_id: str, hour_ts: int) -> int:
        return self._counts.get((sensor_id, hour_ts), 0)
