"""Sound pressure level metering: weighting curves, fractional-octave band
analysis, and the one-minute wire format.

Levels are computed from 16-bit PCM frames at 48 kHz. Each 1 s frame yields one
slow (1 s) block and eight fast (125 ms) blocks; sixty frames make a minute
file, a ustar tar holding ``slow.csv`` and ``fast.csv``.

The A and C curves are the analytic pole forms from IEC 61672-1, normalized to
exactly 0 dB at 1 kHz. Band centers follow the base-10 preferred series
(third-octave ratio 10^(1/10), octave ratio 10^(3/10)).
"""

from __future__ import annotations

import io
import math
import tarfile
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AssemblyError, DomainError

SAMPLE_RATE_HZ = 48000
FAST_WINDOW_S = 0.125
SLOW_WINDOW_S = 1.0
FAST_PER_SLOW = 8
SLOW_PER_MINUTE = 60
FAST_PER_MINUTE = 480

FLOOR_DB = 32.0
CEILING_DB = 120.0

# IEC 61672-1 pole frequencies (Hz), full precision.
_F1 = 20.598997
_F2 = 107.65265
_F3 = 737.86223
_F4 = 12194.217

OCTAVE_BAND_COUNT = 10
THIRD_OCTAVE_BAND_COUNT = 30

# Nominal labels for the wire-format column names; exact centers are geometric.
OCTAVE_NOMINAL = (31.5, 63, 125, 250, 500, 1000, 2000, 4000, 8000, 16000)
THIRD_OCTAVE_NOMINAL = (
    25, 31.5, 40, 50, 63, 80, 100, 125, 160, 200,
    250, 315, 400, 500, 630, 800, 1000, 1250, 1600, 2000,
    2500, 3150, 4000, 5000, 6300, 8000, 10000, 12500, 16000, 20000,
)


def _ra(f2: float) -> float:
    """IEC 61672 A-curve magnitude (linear) at squared frequency f2."""
    return (_F4 ** 2 * f2 ** 2) / (
        (f2 + _F1 ** 2)
        * math.sqrt((f2 + _F2 ** 2) * (f2 + _F3 ** 2))
        * (f2 + _F4 ** 2)
    )


def _rc(f2: float) -> float:
    """IEC 61672 C-curve magnitude (linear) at squared frequency f2."""
    return (_F4 ** 2 * f2) / ((f2 + _F1 ** 2) * (f2 + _F4 ** 2))


_RA_1K = _ra(1000.0 ** 2)
_RC_1K = _rc(1000.0 ** 2)


def weighting_gain_db(freq_hz: float, weighting: str) -> float:
    """Standard weighting gain in dB at ``freq_hz``.

    Z is 0 everywhere; A and C are the IEC 61672-1 analytic curves normalized
    to exactly 0 dB at 1 kHz. Raises DomainError for non-positive or
    non-finite frequencies or an unknown weighting.
    """
    if not math.isfinite(freq_hz) or freq_hz <= 0.0:
        raise DomainError(f"frequency must be finite and > 0 Hz, got {freq_hz!r}")
    if weighting == "Z":
        return 0.0
    f2 = freq_hz * freq_hz
    if weighting == "A":
        return 20.0 * math.log10(_ra(f2) / _RA_1K)
    if weighting == "C":
        return 20.0 * math.log10(_rc(f2) / _RC_1K)
    raise DomainError(f"unknown weighting {weighting!r}, expected A, C or Z")


def band_centers(kind: str) -> list[float]:
    """Exact base-10 preferred band centers in Hz.

    third_octave: 30 bands, 1000 * 10^(n/10) for n in [-16, 13]
    (nominal 25 Hz .. 20 kHz). octave: 10 bands, 1000 * 10^(3n/10) for
    n in [-5, 4] (nominal 31.5 Hz .. 16 kHz).
    """
    if kind == "third_octave":
        return [1000.0 * 10.0 ** (n / 10.0) for n in range(-16, 14)]
    if kind == "octave":
        return [1000.0 * 10.0 ** (3 * n / 10.0) for n in range(-5, 5)]
    raise DomainError(f"unknown band kind {kind!r}")


def band_edges(kind: str) -> list[tuple[float, float]]:
    """(low, high) edges per band; adjacent bands tile exactly."""
    half = 10.0 ** (1.0 / 20.0) if kind == "third_octave" else 10.0 ** (3.0 / 20.0)
    return [(c / half, c * half) for c in band_centers(kind)]


@dataclass(frozen=True)
class Calibration:
    """Maps digital full-scale RMS to SPL and bounds the output range."""

    offset_db: float
    floor_db: float = FLOOR_DB
    ceiling_db: float = CEILING_DB

    def __post_init__(self):
        if not math.isfinite(self.offset_db):
            raise DomainError("calibration offset must be finite")
        if not self.floor_db < self.ceiling_db:
            raise DomainError("calibration floor must be below ceiling")


@dataclass(frozen=True)
class AudioFrame:
    """PCM samples with a start time; must span whole 125 ms blocks."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ
    start_time_ms: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise DomainError(f"sample rate must be {SAMPLE_RATE_HZ} Hz")
        block = int(SAMPLE_RATE_HZ * FAST_WINDOW_S)
        if samples.size == 0 or samples.size % block != 0:
            raise DomainError("frame length must be a positive multiple of 125 ms")
        if samples.dtype != np.int16:
            if np.any(samples < -32768) or np.any(samples > 32767):
                raise DomainError("samples outside the signed 16-bit range")
            samples = samples.astype(np.int16)
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class SplBlock:
    """One integrated level set: broadband Z/A/C plus 10 + 30 band levels."""

    time_ms: int
    integration: str  # "fast" | "slow"
    level_z_db: float
    level_a_db: float
    level_c_db: float
    octave_db: tuple[float, ...]
    third_octave_db: tuple[float, ...]

    def __post_init__(self):
        if len(self.octave_db) != OCTAVE_BAND_COUNT:
            raise DomainError("octave band count must be 10")
        if len(self.third_octave_db) != THIRD_OCTAVE_BAND_COUNT:
            raise DomainError("third-octave band count must be 30")


@dataclass(frozen=True)
class SplMinuteFile:
    sensor_id: str
    minute_start_ms: int
    slow_blocks: tuple[SplBlock, ...]
    fast_blocks: tuple[SplBlock, ...]

    @property
    def file_name(self) -> str:
        return f"{self.sensor_id}_{self.minute_start_ms // 1000}.tar"


class _Analyzer:
    """Precomputed FFT bin weights for the 125 ms analysis window."""

    def __init__(self):
        n = int(SAMPLE_RATE_HZ * FAST_WINDOW_S)
        self.n = n
        self.window = np.hanning(n)
        self.window_norm = float(np.sum(self.window ** 2))
        freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE_HZ)
        self.freqs = freqs
        # Power-fold factors: DC and Nyquist once, interior bins twice.
        fold = np.full(freqs.size, 2.0)
        fold[0] = 1.0
        if n % 2 == 0:
            fold[-1] = 1.0
        self.fold = fold
        gains = {}
        for w in ("A", "C"):
            g = np.zeros(freqs.size)
            g[1:] = [10.0 ** (weighting_gain_db(f, w) / 10.0) for f in freqs[1:]]
            gains[w] = g
        self.gain_a = gains["A"]
        self.gain_c = gains["C"]
        self.oct_map = self._bin_map("octave")
        self.tob_map = self._bin_map("third_octave")

    def _bin_map(self, kind: str) -> list[np.ndarray]:
        return [
            np.nonzero((self.freqs >= lo) & (self.freqs < hi))[0]
            for lo, hi in band_edges(kind)
        ]

    def power_spectrum(self, x: np.ndarray) -> np.ndarray:
        """Windowed power spectrum scaled so the bins sum to mean(x^2)-like
        windowed energy (sum (x*w)^2 / sum w^2)."""
        spec = np.fft.rfft(x * self.window)
        return (spec.real ** 2 + spec.imag ** 2) * self.fold / (self.n * self.window_norm)


_ANALYZER: _Analyzer | None = None


def _analyzer() -> _Analyzer:
    global _ANALYZER
    if _ANALYZER is None:
        _ANALYZER = _Analyzer()
    return _ANALYZER


def _db(energy: float, offset_db: float) -> float:
    if energy <= 0.0:
        return -math.inf
    return 10.0 * math.log10(energy) + offset_db


def _finish(level_db: float, cal: Calibration) -> float:
    return round(min(max(level_db, cal.floor_db), cal.ceiling_db), 2)


def _levels_from_spectrum(
    spectrum: np.ndarray, energy_time: float, cal: Calibration
) -> tuple[float, float, float, tuple[float, ...], tuple[float, ...]]:
    an = _analyzer()
    z = _db(energy_time, cal.offset_db)
    a = _db(float(np.dot(spectrum, an.gain_a)), cal.offset_db)
    c = _db(float(np.dot(spectrum, an.gain_c)), cal.offset_db)
    octs = tuple(_finish(_db(float(spectrum[m].sum()), cal.offset_db), cal) for m in an.oct_map)
    tobs = tuple(_finish(_db(float(spectrum[m].sum()), cal.offset_db), cal) for m in an.tob_map)
    return _finish(z, cal), _finish(a, cal), _finish(c, cal), octs, tobs


def compute_block_levels(frame: AudioFrame, cal: Calibration) -> tuple[SplBlock, list[SplBlock]]:
    """Integrate one 1 s frame into its slow block and eight fast blocks.

    Unweighted (Z) levels come from time-domain RMS energy; A/C and band
    levels from Hann-windowed 125 ms spectra. The slow block reuses the mean
    of the eight fast spectra, so a slow level is exactly the energy average
    of its fast levels before clamping and rounding. Output levels are
    clamped to [floor, ceiling] and quantized to the 0.01 dB wire precision.
    """
    if frame.samples.size != SAMPLE_RATE_HZ:
        raise DomainError("frame must cover exactly 1 s (48000 samples)")
    an = _analyzer()
    x = frame.samples.astype(np.float64) / 32768.0
    fast_blocks = []
    spectra = np.empty((FAST_PER_SLOW, an.freqs.size))
    for i in range(FAST_PER_SLOW):
        seg = x[i * an.n : (i + 1) * an.n]
        spectra[i] = an.power_spectrum(seg)
        z, a, c, octs, tobs = _levels_from_spectrum(
            spectra[i], float(np.mean(seg ** 2)), cal
        )
        fast_blocks.append(
            SplBlock(
                time_ms=frame.start_time_ms + int(i * FAST_WINDOW_S * 1000),
                integration="fast",
                level_z_db=z,
                level_a_db=a,
                level_c_db=c,
                octave_db=octs,
                third_octave_db=tobs,
            )
        )
    z, a, c, octs, tobs = _levels_from_spectrum(
        spectra.mean(axis=0), float(np.mean(x ** 2)), cal
    )
    slow = SplBlock(
        time_ms=frame.start_time_ms,
        integration="slow",
        level_z_db=z,
        level_a_db=a,
        level_c_db=c,
        octave_db=octs,
        third_octave_db=tobs,
    )
    return slow, fast_blocks


def _fmt_label(value: float) -> str:
    return f"{value:g}"


CSV_HEADER = (
    "ts_ms,dBZ,dBA,dBC,"
    + ",".join(f"oct_{_fmt_label(v)}" for v in OCTAVE_NOMINAL)
    + ","
    + ",".join(f"tob_{_fmt_label(v)}" for v in THIRD_OCTAVE_NOMINAL)
)


_ROW_FMT = "%d" + ",%.2f" * 43 + "\n"


def _block_row(block: SplBlock) -> str:
    levels = (
        [block.level_z_db, block.level_a_db, block.level_c_db]
        + list(block.octave_db)
        + list(block.third_octave_db)
    )
    return f"{block.time_ms}," + ",".join(f"{v:.2f}" for v in levels)


def _blocks_csv(blocks: Iterable[SplBlock]) -> bytes:
    lines = [CSV_HEADER]
    lines.extend(_block_row(b) for b in blocks)
    return ("\n".join(lines) + "\n").encode("ascii")


def levels_csv_bytes(ts_ms: np.ndarray, levels: np.ndarray) -> bytes:
    """Vectorized serializer for a (n, 43) level matrix; same wire format as
    the block-based path (header + %.2f cells)."""
    if levels.ndim != 2 or levels.shape[1] != 43:
        raise AssemblyError(f"level matrix must be (n, 43), got {levels.shape}")
    rows = map(
        _ROW_FMT.__mod__,
        zip(ts_ms.tolist(), *(levels[:, i].tolist() for i in range(43))),
    )
    return (CSV_HEADER + "\n" + "".join(rows)).encode("ascii")


def minute_tar_from_arrays(
    slow_ts_ms: np.ndarray,
    slow_levels: np.ndarray,
    fast_ts_ms: np.ndarray,
    fast_levels: np.ndarray,
    minute_start_ms: int,
) -> bytes:
    """Array fast path to a minute tar (same bytes as assemble_minute_file on
    equivalent blocks); callers are responsible for count/contiguity."""
    if slow_levels.shape[0] != SLOW_PER_MINUTE or fast_levels.shape[0] != FAST_PER_MINUTE:
        raise AssemblyError("need exactly 60 slow and 480 fast rows")
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for name, payload in (
            ("slow.csv", levels_csv_bytes(slow_ts_ms, slow_levels)),
            ("fast.csv", levels_csv_bytes(fast_ts_ms, fast_levels)),
        ):
            info = tarfile.TarInfo(name)
            info.size = len(payload)
            info.mtime = minute_start_ms // 1000
            info.mode = 0o644
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(payload))
    return buf.getvalue()


def _check_contiguous(blocks: Sequence[SplBlock], start_ms: int, step_ms: int, count: int, kind: str):
    if len(blocks) != count:
        raise AssemblyError(f"expected {count} {kind} blocks, got {len(blocks)}")
    for i, b in enumerate(blocks):
        if b.integration != kind:
            raise AssemblyError(f"{kind} slot {i} holds a {b.integration} block")
        expect = start_ms + i * step_ms
        if b.time_ms != expect:
            raise AssemblyError(
                f"{kind} block {i} at {b.time_ms} ms, expected {expect} ms (gap or duplicate)"
            )


def assemble_minute_file(
    slow_blocks: Sequence[SplBlock],
    fast_blocks: Sequence[SplBlock],
    sensor_id: str,
    minute_start_ms: int,
) -> bytes:
    """Serialize 60 slow + 480 fast contiguous blocks into a ustar tar.

    Members are ``slow.csv`` and ``fast.csv``; the archive is deterministic
    (fixed metadata, mtime = minute start). Raises AssemblyError rather than
    emitting a partial minute.
    """
    _check_contiguous(slow_blocks, minute_start_ms, 1000, SLOW_PER_MINUTE, "slow")
    _check_contiguous(fast_blocks, minute_start_ms, 125, FAST_PER_MINUTE, "fast")
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for name, payload in (
            ("slow.csv", _blocks_csv(slow_blocks)),
            ("fast.csv", _blocks_csv(fast_blocks)),
        ):
            info = tarfile.TarInfo(name)
            info.size = len(payload)
            info.mtime = minute_start_ms // 1000
            info.mode = 0o644
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(payload))
    return buf.getvalue()


def _parse_csv(payload: bytes, kind: str, count: int) -> tuple[SplBlock, ...]:
    lines = payload.decode("ascii").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise AssemblyError(f"{kind}.csv header mismatch")
    rows = lines[1:]
    if len(rows) != count:
        raise AssemblyError(f"{kind}.csv has {len(rows)} rows, expected {count}")
    blocks = []
    n_oct = len(OCTAVE_NOMINAL)
    for row in rows:
        cells = row.split(",")
        if len(cells) != 4 + n_oct + len(THIRD_OCTAVE_NOMINAL):
            raise AssemblyError(f"{kind}.csv row has {len(cells)} columns")
        values = [float(c) for c in cells[1:]]
        blocks.append(
            SplBlock(
                time_ms=int(cells[0]),
                integration=kind,
                level_z_db=values[0],
                level_a_db=values[1],
                level_c_db=values[2],
                octave_db=tuple(values[3 : 3 + n_oct]),
                third_octave_db=tuple(values[3 + n_oct :]),
            )
        )
    return tuple(blocks)


def parse_minute_file(data: bytes, sensor_id: str = "", minute_start_ms: int | None = None) -> SplMinuteFile:
    """Inverse of assemble_minute_file. Raises AssemblyError on any defect."""
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r") as tar:
            names = tar.getnames()
            if sorted(names) != ["fast.csv", "slow.csv"]:
                raise AssemblyError(f"unexpected tar members {names}")
            slow_raw = tar.extractfile("slow.csv").read()
            fast_raw = tar.extractfile("fast.csv").read()
    except tarfile.TarError as exc:
        raise AssemblyError(f"not a readable minute tar: {exc}") from exc
    slow = _parse_csv(slow_raw, "slow", SLOW_PER_MINUTE)
    fast = _parse_csv(fast_raw, "fast", FAST_PER_MINUTE)
    start = slow[0].time_ms if minute_start_ms is None else minute_start_ms
    _check_contiguous(slow, start, 1000, SLOW_PER_MINUTE, "slow")
    _check_contiguous(fast, start, 125, FAST_PER_MINUTE, "fast")
    return SplMinuteFile(
        sensor_id=sensor_id,
        minute_start_ms=start,
        slow_blocks=slow,
        fast_blocks=fast,
    )


def is_readable_minute_file(data: bytes) -> bool:
    """True when the tar parses with both CSVs present at full row counts.

    Cheap structural check (no per-cell parsing); parse_minute_file is the
    full validator.
    """
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r") as tar:
            names = tar.getnames()
            if sorted(names) != ["fast.csv", "slow.csv"]:
                return False
            for name, rows in (("slow.csv", SLOW_PER_MINUTE), ("fast.csv", FAST_PER_MINUTE)):
                payload = tar.extractfile(name).read()
                lines = payload.decode("ascii").splitlines()
                if len(lines) != rows + 1 or lines[0] != CSV_HEADER:
                    return False
        return True
    except (tarfile.TarError, UnicodeDecodeError, KeyError, AttributeError, OSError):
        return False


def minute_slow_dba(data: bytes) -> tuple[list[int], list[float]]:
    """Fast extraction of the 60 (ts_s, dBA) pairs from a minute tar's slow
    CSV; full parsing is not needed for level analytics."""
    with tarfile.open(fileobj=io.BytesIO(data), mode="r") as tar:
        payload = tar.extractfile("slow.csv").read()
    ts, dba = [], []
    for line in payload.decode("ascii").splitlines()[1:]:
        cells = line.split(",", 3)
        ts.append(int(cells[0]) // 1000)
        dba.append(float(cells[2]))
    return ts, dba
