"""C-MAPSS ingestion: parsing, channel selection, normalization, windowing.

The raw text format is the public C-MAPSS distribution: whitespace-separated
rows of ``unit cycle setting1..3 sensor1..21``, one trajectory per engine,
plus a companion RUL file for test engines (the i-th line is the remaining
life of the i-th test engine at truncation).

All operations are pure functions over immutable inputs; normalization
statistics are fitted on the training split only and test values outside
the training range clamp to [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    AllChannelsConstant,
    CacheFormatError,
    DataNotFound,
    DegenerateChannel,
    MalformedLine,
    NonContiguousCycles,
)

log = logging.getLogger(__name__)

N_SETTINGS = 3
N_SENSORS = 21
MIN_FIELDS = 2 + N_SETTINGS + N_SENSORS
VARIANCE_EPSILON = 1e-8
DEFAULT_RUL_CAP = 130.0
DEFAULT_MIN_CYCLES = 150
_CACHE_MAGIC = "rulattack-dataset"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class EngineRecord:
    """One raw telemetry row: engine id, cycle index, settings, sensors."""
    unit_id: int
    cycle: int
    op_settings: tuple
    sensors: tuple


@dataclass(frozen=True)
class NormalizationStats:
    """Training-split min/max per kept channel.

    ``kept_channels`` holds 0-based indices into the raw sensor vector
    (sensor number minus one in C-MAPSS terms).
    """
    kept_channels: tuple
    channel_min: tuple
    channel_max: tuple

    def __post_init__(self):
        if not (len(self.kept_channels) == len(self.channel_min) == len(self.channel_max)):
            raise ValueError("kept_channels/min/max length mismatch")
        for lo, hi in zip(self.channel_min, self.channel_max):
            if lo > hi:
                raise ValueError("channel min exceeds max")

    @property
    def n_channels(self) -> int:
        return len(self.kept_channels)

    def scale(self, raw: np.ndarray) -> np.ndarray:
        """Map raw kept-channel values into [0, 1], clamping out-of-range."""
        lo = np.asarray(self.channel_min, dtype=np.float64)
        hi = np.asarray(self.channel_max, dtype=np.float64)
        span = hi - lo
        if np.any(span == 0.0):
            bad = [self.kept_channels[i] for i in np.nonzero(span == 0.0)[0]]
            raise DegenerateChannel(f"channels {bad} have max == min")
        return np.clip((raw - lo) / span, 0.0, 1.0)

    def unscale(self, normalized: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`scale` (without the clamp)."""
        lo = np.asarray(self.channel_min, dtype=np.float64)
        hi = np.asarray(self.channel_max, dtype=np.float64)
        return lo + np.asarray(normalized, dtype=np.float64) * (hi - lo)

    def to_dict(self) -> dict:
        return {
            "kept_channels": list(self.kept_channels),
            "channel_min": [float(v) for v in self.channel_min],
            "channel_max": [float(v) for v in self.channel_max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            kept_channels=tuple(int(c) for c in d["kept_channels"]),
            channel_min=tuple(float(v) for v in d["channel_min"]),
            channel_max=tuple(float(v) for v in d["channel_max"]),
        )


@dataclass(frozen=True)
class EngineTrajectory:
    """Normalized per-engine sensor matrix ``[cycles, n_kept]``.

    ``true_rul`` is the remaining life at the last observed cycle for test
    engines (from the companion RUL file); ``None`` marks run-to-failure
    training engines, whose remaining life at the last cycle is zero.
    """
    unit_id: int
    values: np.ndarray
    true_rul: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def n_cycles(self) -> int:
        return self.values.shape[0]

    def rul_at(self, cycle: int, rul_cap: float = DEFAULT_RUL_CAP) -> float:
        """Piece-wise ground-truth RUL for the window ending at ``cycle``."""
        base = 0.0 if self.true_rul is None else float(self.true_rul)
        return min(float(rul_cap), base + self.n_cycles - cycle)


@dataclass(frozen=True)
class SensorWindow:
    """A ``[T, N]`` slice of normalized readings ending at ``end_cycle``."""
    values: np.ndarray
    engine_id: int
    end_cycle: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"window values must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class LabeledWindow:
    window: SensorWindow
    rul: float


# -- parsing -----------------------------------------------------------------

def parse_cmapss(lines) -> list:
    """Parse C-MAPSS rows into records grouped by unit, ordered by cycle.

    ``lines`` is any iterable of text lines (an open file works). Only the
    first 26 fields of each row are read; trailing fields are ignored.
    """
    by_unit: dict = {}
    for line_no, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < MIN_FIELDS:
            raise MalformedLine(line_no, f"expected >={MIN_FIELDS} fields, got {len(tokens)}")
        try:
            values = [float(tok) for tok in tokens[:MIN_FIELDS]]
        except ValueError:
            raise MalformedLine(line_no, "non-numeric field") from None
        unit_f, cycle_f = values[0], values[1]
        if unit_f != int(unit_f) or cycle_f != int(cycle_f) or unit_f < 1 or cycle_f < 1:
            raise MalformedLine(line_no, "unit and cycle must be positive integers")
        rec = EngineRecord(
            unit_id=int(unit_f),
            cycle=int(cycle_f),
            op_settings=tuple(values[2:2 + N_SETTINGS]),
            sensors=tuple(values[2 + N_SETTINGS:MIN_FIELDS]),
        )
        by_unit.setdefault(rec.unit_id, []).append(rec)

    records = []
    for unit_id in sorted(by_unit):
        unit_records = sorted(by_unit[unit_id], key=lambda r: r.cycle)
        cycles = [r.cycle for r in unit_records]
        if cycles != list(range(1, len(cycles) + 1)):
            raise NonContiguousCycles(unit_id, "cycles must run 1..C without gaps")
        records.extend(unit_records)
    return records


def parse_rul_file(lines) -> list:
    """Parse the companion RUL file: one non-negative number per line."""
    ruls = []
    for line_no, line in enumerate(lines, start=1):
        token = line.strip()
        if not token:
            continue
        try:
            value = float(token)
        except ValueError:
            raise MalformedLine(line_no, "non-numeric RUL value") from None
        if value < 0:
            raise MalformedLine(line_no, "negative RUL value")
        ruls.append(value)
    return ruls


def group_by_unit(records) -> dict:
    grouped: dict = {}
    for rec in records:
        grouped.setdefault(rec.unit_id, []).append(rec)
    return grouped


def unit_lengths(records) -> dict:
    return {unit: len(rows) for unit, rows in group_by_unit(records).items()}


def dataset_paths(data_dir, dataset: str) -> tuple:
    """Locate train/test/RUL files for a dataset id such as FD001."""
    data_dir = Path(data_dir)
    paths = (
        data_dir / f"train_{dataset}.txt",
        data_dir / f"test_{dataset}.txt",
        data_dir / f"RUL_{dataset}.txt",
    )
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DataNotFound(f"missing data files: {', '.join(missing)}")
    return paths


# -- channel selection and normalization --------------------------------------

def select_informative_channels(records, variance_epsilon: float = VARIANCE_EPSILON) -> NormalizationStats:
    """Fit per-channel min/max, dropping channels that carry no signal.

    A channel is dropped when its training values are constant, or when its
    min-max scaled variance falls below ``variance_epsilon``.
    """
    if len(records) < 2:
        raise ValueError("need records spanning at least 2 cycles to fit stats")
    raw = np.asarray([r.sensors for r in records], dtype=np.float64)
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    kept = []
    for ch in range(raw.shape[1]):
        span = hi[ch] - lo[ch]
        if span == 0.0:
            continue
        scaled = (raw[:, ch] - lo[ch]) / span
        if scaled.var() < variance_epsilon:
            continue
        kept.append(ch)
    if not kept:
        raise AllChannelsConstant("every sensor channel is constant on the training split")
    return NormalizationStats(
        kept_channels=tuple(kept),
        channel_min=tuple(float(lo[ch]) for ch in kept),
        channel_max=tuple(float(hi[ch]) for ch in kept),
    )


def normalize(records, stats: NormalizationStats) -> list:
    """Scale kept channels into [0, 1] per engine; returns trajectories."""
    trajectories = []
    for unit_id, rows in sorted(group_by_unit(records).items()):
        raw = np.asarray([r.sensors for r in sorted(rows, key=lambda r: r.cycle)],
                         dtype=np.float64)
        kept = raw[:, list(stats.kept_channels)]
        trajectories.append(EngineTrajectory(unit_id=unit_id, values=stats.scale(kept)))
    return trajectories


def attach_rul(trajectories, ruls) -> list:
    """Pair test trajectories (ordered by unit id) with RUL file values."""
    if len(ruls) < len(trajectories):
        raise MalformedLine(len(ruls) + 1, "RUL file has fewer lines than test engines")
    ordered = sorted(trajectories, key=lambda t: t.unit_id)
    return [replace(t, true_rul=float(r)) for t, r in zip(ordered, ruls)]


# -- windowing ----------------------------------------------------------------

def make_windows(trajectories, seq_len: int, rul_cap: float = DEFAULT_RUL_CAP,
                 stride: int = 1) -> list:
    """Cut sliding windows with piece-wise RUL labels.

    The window ending at cycle ``t`` is labeled ``min(rul_cap, fail - t)``
    for run-to-failure engines and ``min(rul_cap, true_rul + last - t)``
    for truncated test engines. Engines shorter than ``seq_len`` are
    skipped with a warning. The terminal window is always included
    regardless of stride.
    """
    if seq_len < 1 or stride < 1:
        raise ValueError("seq_len and stride must be positive")
    out = []
    for traj in trajectories:
        c = traj.n_cycles
        if c < seq_len:
            log.warning("engine %d has %d cycles, need >= %d; skipped",
                        traj.unit_id, c, seq_len)
            continue
        ends = list(range(c, seq_len - 1, -stride))[::-1]
        for t in ends:
            window = SensorWindow(values=traj.values[t - seq_len:t],
                                  engine_id=traj.unit_id, end_cycle=t)
            out.append(LabeledWindow(window=window, rul=traj.rul_at(t, rul_cap)))
    return out


def terminal_windows(trajectories, seq_len: int, rul_cap: float = DEFAULT_RUL_CAP) -> list:
    """One window per engine, ending at its last observed cycle."""
    out = []
    for traj in trajectories:
        c = traj.n_cycles
        if c < seq_len:
            log.warning("engine %d has %d cycles, need >= %d; skipped",
                        traj.unit_id, c, seq_len)
            continue
        window = SensorWindow(values=traj.values[c - seq_len:c],
                              engine_id=traj.unit_id, end_cycle=c)
        out.append(LabeledWindow(window=window, rul=traj.rul_at(c, rul_cap)))
    return out


def filter_min_cycles(items, min_cycles: int = DEFAULT_MIN_CYCLES) -> list:
    """Keep engines with at least ``min_cycles`` observed cycles.

    Accepts either a flat record list (returns the retained engines'
    records) or a trajectory list.
    """
    if not items:
        return []
    if isinstance(items[0], EngineTrajectory):
        return [t for t in items if t.n_cycles >= min_cycles]
    lengths = unit_lengths(items)
    return [r for r in items if lengths[r.unit_id] >= min_cycles]


# -- dataset cache -------------------------------------------------------------

def save_dataset(path, windows, stats: NormalizationStats, seq_len: int,
                 rul_cap: float, stride: int = 1) -> None:
    """Write windows to a self-describing text cache, bit-exact across runs."""
    path = Path(path)
    lines = [
        f"{_CACHE_MAGIC} {_CACHE_VERSION}",
        f"seq_len={seq_len}",
        f"rul_cap={float(rul_cap)!r}",
        f"stride={stride}",
        "kept_channels=" + ",".join(str(c) for c in stats.kept_channels),
        "channel_min=" + ",".join(repr(v) for v in stats.channel_min),
        "channel_max=" + ",".join(repr(v) for v in stats.channel_max),
        "columns=engine_id,end_cycle,rul,values(row-major)",
    ]
    for lw in windows:
        flat = lw.window.values.reshape(-1)
        row = [str(lw.window.engine_id), str(lw.window.end_cycle), repr(float(lw.rul))]
        row.extend(repr(float(v)) for v in flat)
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path):
    """Read a cache written by :func:`save_dataset`.

    Returns ``(windows, stats, meta)`` with ``meta`` holding seq_len,
    rul_cap and stride.
    """
    path = Path(path)
    if not path.is_file():
        raise DataNotFound(f"dataset cache not found: {path}")
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(_CACHE_MAGIC):
        raise CacheFormatError(f"{path}: not a dataset cache")
    try:
        version = int(text[0].split()[1])
    except (IndexError, ValueError):
        raise CacheFormatError(f"{path}: unreadable version") from None
    if version != _CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported cache version {version}")

    header = {}
    body_start = None
    for i, line in enumerate(text[1:], start=1):
        key, _, value = line.partition("=")
        header[key] = value
        if key == "columns":
            body_start = i + 1
            break
    required = {"seq_len", "rul_cap", "stride", "kept_channels", "channel_min",
                "channel_max", "columns"}
    if body_start is None or not required.issubset(header):
        raise CacheFormatError(f"{path}: incomplete header")

    try:
        seq_len = int(header["seq_len"])
        rul_cap = float(header["rul_cap"])
        stride = int(header["stride"])
        stats = NormalizationStats(
            kept_channels=tuple(int(c) for c in header["kept_channels"].split(",")),
            channel_min=tuple(float(v) for v in header["channel_min"].split(",")),
            channel_max=tuple(float(v) for v in header["channel_max"].split(",")),
        )
    except ValueError as exc:
        raise CacheFormatError(f"{path}: bad header value ({exc})") from None

    n_ch = stats.n_channels
    windows = []
    for line_no, line in enumerate(text[body_start:], start=body_start + 1):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 3 + seq_len * n_ch:
            raise CacheFormatError(f"{path}:{line_no}: wrong field count")
        try:
            engine_id, end_cycle = int(fields[0]), int(fields[1])
            rul = float(fields[2])
            values = np.asarray([float(v) for v in fields[3:]],
                                dtype=np.float64).reshape(seq_len, n_ch)
        except ValueError as exc:
            raise CacheFormatError(f"{path}:{line_no}: {exc}") from None
        windows.append(LabeledWindow(
            window=SensorWindow(values=values, engine_id=engine_id, end_cycle=end_cycle),
            rul=rul,
        ))
    meta = {"seq_len": seq_len, "rul_cap": rul_cap, "stride": stride}
    return windows, stats, meta
