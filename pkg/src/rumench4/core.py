"""Domain types, CSV parsers and clock-drift correction.

All timestamps are float seconds since the Unix epoch (UTC).  A
:class:`Series` is the common carrier for every signal: a uniform grid
(``t0``, ``dt``) with a value array and a validity mask.  Invalid samples
hold NaN and are ignored by every statistic downstream.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, time as dtime, timezone
from enum import Enum
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import AnchorError, DataError, EmptySeriesError, RowError, SchemaError

SCOUT_DT = 10.0
SNIFFER_DT = 1.0
SCOUT_CEILING_PPM = 50000.0
MAX_DRIFT_S = 120.0


class Unit(str, Enum):
    PPM = "ppm"
    MG_M3 = "mg/m3"
    L_MIN = "L/min"
    DEG_C = "degC"
    MBAR = "mbar"


class BehaviorLabel(str, Enum):
    HEAD_IN_HOOD = "head_in_hood"
    SITTING = "sitting"
    STANDING = "standing"
    FEEDING = "feeding"
    OTHER = "other"


@dataclass(frozen=True)
class SensorSpec:
    """Static sensor characteristics.

    ``tau_s`` is the 63 % step-response time.  For the in-rumen sensor only
    an upper bound (< 1 s) is known, so 1.0 is stored.
    """

    name: str
    tau_s: float
    range_ppm: tuple[float, float]
    resolution_ppm: float | None
    sample_hz: float

    def __post_init__(self):
        if not self.tau_s > 0:
            raise ValueError("tau_s must be positive")


SCOUT_SENSOR = SensorSpec("scout", 1.0, (0.0, SCOUT_CEILING_PPM), 100.0, 0.1)
SNIFFER_SENSOR = SensorSpec("moologger", 2.754, (0.0, math.inf), None, 1.0)


# --------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class ScoutRecord:
    t: float
    ch4_ppm: float | None
    temp_c: float | None
    status: str


@dataclass(frozen=True)
class SnifferRecord:
    t: float
    ch4_mg_m3: float | None
    co2_mg_m3: float | None
    flow_l_min: float | None
    temp_c: float | None
    pressure_mbar: float | None


@dataclass(frozen=True)
class BehaviorInterval:
    start: float
    end: float
    label: BehaviorLabel

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class DriftAnchor:
    """A pair of (device-logged time, true time) from a deployment record."""

    logged_t: float
    true_t: float

    @property
    def offset(self) -> float:
        return self.true_t - self.logged_t


# --------------------------------------------------------------------------
# Series and interval sets


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Series:
    """Uniformly sampled signal with a per-sample validity mask.

    ``flags`` optionally carries per-sample quality-control class codes
    (see :class:`rumench4.qc.SampleClass`); ``meta`` holds free-form
    counters such as duplicate or conversion warnings.
    """

    t0: float
    dt: float
    values: np.ndarray
    valid: np.ndarray
    unit: Unit | str = Unit.PPM
    flags: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        values = np.asarray(self.values, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 1 or values.shape != valid.shape:
            raise ValueError("values and valid must be 1-D with equal length")
        valid = valid & np.isfinite(values)
        values = np.where(valid, values, np.nan)
        object.__setattr__(self, "values", _frozen(values, float))
        object.__setattr__(self, "valid", _frozen(valid, bool))
        if self.flags is not None:
            flags = np.asarray(self.flags, dtype=np.int8)
            if flags.shape != values.shape:
                raise ValueError("flags must match values")
            object.__setattr__(self, "flags", _frozen(flags, np.int8))

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def t_end(self) -> float:
        """Time just past the last sample."""
        return self.t0 + self.dt * len(self)

    def replace(self, **changes) -> "Series":
        return dataclasses.replace(self, **changes)

    def with_valid(self, valid) -> "Series":
        valid = np.asarray(valid, dtype=bool) & self.valid
        return self.replace(values=np.where(valid, self.values, np.nan), valid=valid)

    def index_of(self, t) -> np.ndarray:
        """Nearest grid index for time(s) ``t`` (not clipped)."""
        return np.rint((np.asarray(t, dtype=float) - self.t0) / self.dt).astype(np.int64)

    def same_grid(self, other: "Series", tol: float = 1e-6) -> bool:
        return (
            len(self) == len(other)
            and abs(self.dt - other.dt) <= tol
            and abs(self.t0 - other.t0) <= tol * self.dt
        )


@dataclass(frozen=True, eq=False)
class IntervalSet:
    """Sorted, non-overlapping half-open time intervals ``[start, end)``.

    Construction merges overlapping and touching intervals.
    """

    starts: np.ndarray
    ends: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.starts, dtype=float).ravel()
        e = np.asarray(self.ends, dtype=float).ravel()
        if s.shape != e.shape:
            raise ValueError("starts and ends differ in length")
        if np.any(e < s):
            raise ValueError("interval end before start")
        order = np.argsort(s, kind="stable")
        s, e = s[order], e[order]
        ms, me = [], []
        for a, b in zip(s, e):
            if ms and a <= me[-1]:
                me[-1] = max(me[-1], b)
            else:
                ms.append(a)
                me.append(b)
        object.__setattr__(self, "starts", _frozen(ms, float))
        object.__setattr__(self, "ends", _frozen(me, float))

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "IntervalSet":
        pairs = list(pairs)
        if not pairs:
            return cls.empty()
        s, e = zip(*pairs)
        return cls(np.array(s, float), np.array(e, float))

    @classmethod
    def from_mask(cls, times, mask, dt: float) -> "IntervalSet":
        """Each maximal run of flagged samples i..j becomes [t_i, t_j + dt)."""
        s_idx, e_idx = runs(mask)
        times = np.asarray(times, dtype=float)
        if s_idx.size == 0:
            return cls.empty()
        return cls(times[s_idx], times[e_idx - 1] + dt)

    def __len__(self) -> int:
        return self.starts.size

    def __iter__(self) -> Iterator[tuple[float, float]]:
        return iter(zip(self.starts.tolist(), self.ends.tolist()))

    def __repr__(self) -> str:
        return f"IntervalSet({list(self)!r})"

    @property
    def durations(self) -> np.ndarray:
        return self.ends - self.starts

    @property
    def total(self) -> float:
        return float(self.durations.sum())

    def pad(self, before: float, after: float) -> "IntervalSet":
        return IntervalSet(self.starts - before, self.ends + after)

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(
            np.concatenate([self.starts, other.starts]),
            np.concatenate([self.ends, other.ends]),
        )

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if len(self) == 0:
            return np.zeros(t.shape, dtype=bool)
        k = np.searchsorted(self.starts, t, side="right") - 1
        kk = np.clip(k, 0, None)
        return (k >= 0) & (t < self.ends[kk])

    def overlaps(self, start: float, end: float) -> bool:
        if len(self) == 0:
            return False
        return bool(np.any((self.starts < end) & (self.ends > start)))

    def to_mask(self, series_or_times) -> np.ndarray:
        t = series_or_times.times if isinstance(series_or_times, Series) else series_or_times
        return self.contains(t)


def runs(mask) -> tuple[np.ndarray, np.ndarray]:
    """Start and (exclusive) end indices of every run of True in ``mask``."""
    m = np.asarray(mask, dtype=bool).astype(np.int8)
    d = np.diff(np.concatenate([[0], m, [0]]))
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1)


# --------------------------------------------------------------------------
# Timestamps

_FRAC = re.compile(r"\.(\d+)")
_CLOCK = re.compile(r"^(\d{1,2}):(\d{2})(?::(\d{2})(\.\d+)?)?$")


def parse_timestamp(text: str) -> float:
    """Parse ISO-8601 (naive means UTC) or numeric epoch seconds."""
    s = text.strip()
    if not s:
        raise ValueError("empty timestamp")
    try:
        value = float(s)
    except ValueError:
        pass
    else:
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"invalid epoch seconds {s!r}")
        return value
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    # fromisoformat on 3.10 accepts only 3 or 6 fractional digits
    s = _FRAC.sub(lambda m: "." + (m.group(1) + "000000")[:6], s, count=1)
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    value = dt.timestamp()
    if value < 0:
        raise ValueError("timestamp before epoch")
    return value


def format_timestamp(t: float) -> str:
    """ISO-8601 UTC with millisecond resolution."""
    ms = int(round(t * 1000.0))
    sec, frac = divmod(ms, 1000)
    stamp = datetime.fromtimestamp(sec, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
    return f"{stamp}.{frac:03d}Z"


def day_start(t: float) -> float:
    """Epoch seconds of the UTC midnight at or before ``t``."""
    return math.floor(t / 86400.0) * 86400.0


def _session_epoch(session_date) -> float:
    if isinstance(session_date, (int, float)):
        return float(session_date)
    if isinstance(session_date, str):
        session_date = date.fromisoformat(session_date)
    return datetime.combine(session_date, dtime(0), tzinfo=timezone.utc).timestamp()


def _parse_time_field(text: str, session: float | None) -> float:
    m = _CLOCK.match(text.strip())
    if m:
        if session is None:
            raise ValueError("clock-of-day time requires a session date")
        h, mi = int(m.group(1)), int(m.group(2))
        sec = int(m.group(3) or 0) + float(m.group(4) or 0.0)
        if h > 23 or mi > 59 or sec >= 60:
            raise ValueError(f"invalid clock time {text!r}")
        return session + 3600.0 * h + 60.0 * mi + sec
    return parse_timestamp(text)


# --------------------------------------------------------------------------
# CSV parsing

_MISSING = {"", "nan", "na", "n/a", "null", "none"}

SCOUT_COLUMNS = ("timestamp", "ch4_ppm", "temp_c", "status")
SNIFFER_COLUMNS = ("timestamp", "ch4_mg_m3", "co2_mg_m3", "flow_l_min", "temp_c", "pressure_mbar")
BEHAVIOR_COLUMNS = ("start", "end", "label")


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig"))
    if isinstance(source, str):
        return io.StringIO(source.lstrip("﻿"))
    return source


def _rows(source, required: Sequence[str], name: str | None):
    reader = csv.reader(_open_text(source))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(required[0], name) from None
    header = [h.strip().lstrip("﻿").lower() for h in header]
    index = {h: i for i, h in enumerate(header)}
    for col in required:
        if col not in index:
            raise SchemaError(col, name)
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            row = row + [""] * (len(header) - len(row))
        yield reader.line_num, {col: row[index[col]].strip() for col in required}


def _number(text: str, line: int, col: str, name) -> float | None:
    if text.lower() in _MISSING:
        return None
    try:
        value = float(text)
    except ValueError:
        raise RowError(line, f"malformed {col} value {text!r}", name) from None
    return value if math.isfinite(value) else None


def _timestamp(text: str, line: int, name, session=None) -> float:
    try:
        return _parse_time_field(text, session)
    except ValueError as exc:
        raise RowError(line, f"malformed timestamp {text!r} ({exc})", name) from None


def parse_scout_csv(source, *, name: str | None = None, counts: Counter | None = None) -> list[ScoutRecord]:
    """Parse an in-rumen logger CSV into records, in file order.

    Concentrations that cannot be parsed (including ``NaN`` written during
    sensor initialization) or fall outside the sensor range become ``None``;
    the row is kept.
    """
    out = []
    lo, hi = SCOUT_SENSOR.range_ppm
    for line, row in _rows(source, SCOUT_COLUMNS, name):
        t = _timestamp(row["timestamp"], line, name)
        try:
            ch4 = float(row["ch4_ppm"])
        except ValueError:
            ch4 = None
        if ch4 is not None and not (math.isfinite(ch4) and lo <= ch4 <= hi):
            ch4 = None
        if ch4 is None and counts is not None:
            counts["missing_ch4"] += 1
        temp = _number(row["temp_c"], line, "temp_c", name)
        out.append(ScoutRecord(t, ch4, temp, row["status"]))
    return out


def parse_sniffer_csv(source, *, name: str | None = None, counts: Counter | None = None) -> list[SnifferRecord]:
    """Parse a sniffer CSV.  Empty/NaN fields are missing; garbage is a RowError."""
    out = []
    for line, row in _rows(source, SNIFFER_COLUMNS, name):
        t = _timestamp(row["timestamp"], line, name)
        vals = [_number(row[c], line, c, name) for c in SNIFFER_COLUMNS[1:]]
        ch4, co2, flow, temp, pres = vals
        if flow is not None and flow < 0:
            raise RowError(line, f"negative flow {flow}", name)
        if pres is not None and not 800.0 <= pres <= 1100.0:
            pres = None
        if counts is not None:
            counts["missing_fields"] += sum(v is None for v in (ch4, co2, flow, temp, pres))
        out.append(SnifferRecord(t, ch4, co2, flow, temp, pres))
    return out


def parse_behavior_csv(source, *, session_date=None, name: str | None = None,
                       counts: Counter | None = None) -> list[BehaviorInterval]:
    """Parse an annotated behavior log, sorted by start time.

    Times may be ISO-8601, epoch seconds, or ``HH:MM[:SS]`` clock-of-day
    relative to ``session_date`` (a date, ISO date string or midnight
    epoch).  Unknown labels map to ``other`` and are counted under
    ``counts["unknown_labels"]``.
    """
    session = None if session_date is None else _session_epoch(session_date)
    known = {lab.value for lab in BehaviorLabel}
    out = []
    for line, row in _rows(source, BEHAVIOR_COLUMNS, name):
        start = _timestamp(row["start"], line, name, session)
        end = _timestamp(row["end"], line, name, session)
        if end <= start:
            raise RowError(line, "interval end is not after start", name)
        label = row["label"].lower()
        if label not in known:
            label = BehaviorLabel.OTHER.value
            if counts is not None:
                counts["unknown_labels"] += 1
        out.append(BehaviorInterval(start, end, BehaviorLabel(label)))
    out.sort(key=lambda b: b.start)
    return out


def parse_anchor_csv(source, *, name: str | None = None) -> list[DriftAnchor]:
    out = []
    for line, row in _rows(source, ("logged_t", "true_t"), name):
        out.append(DriftAnchor(_timestamp(row["logged_t"], line, name),
                               _timestamp(row["true_t"], line, name)))
    return out


# --------------------------------------------------------------------------
# Clock drift


def drift_map(anchors: Sequence[DriftAnchor], max_offset_s: float = MAX_DRIFT_S) -> Callable:
    """Piecewise-linear map from logged to true time.

    Outside the anchor range the nearest segment is extended.
    """
    if len(anchors) < 2:
        raise AnchorError("at least two drift anchors are required")
    x = np.array([a.logged_t for a in anchors], dtype=float)
    y = np.array([a.true_t for a in anchors], dtype=float)
    if np.any(np.diff(x) <= 0):
        raise AnchorError("anchor logged times must be strictly increasing")
    if np.any(np.abs(y - x) > max_offset_s):
        raise AnchorError(f"anchor offset exceeds {max_offset_s} s")
    offs = y - x
    slope = np.diff(offs) / np.diff(x)

    def mapping(t):
        t = np.asarray(t, dtype=float)
        off = np.interp(t, x, offs)
        off = np.where(t < x[0], offs[0] + slope[0] * (t - x[0]), off)
        off = np.where(t > x[-1], offs[-1] + slope[-1] * (t - x[-1]), off)
        return t + off

    return mapping


def correct_clock_drift(records: Sequence, anchors: Sequence[DriftAnchor],
                        max_correction_s: float = MAX_DRIFT_S) -> list:
    """Return copies of ``records`` with ``t`` mapped through the drift map."""
    if not records:
        return []
    mapping = drift_map(anchors, max_correction_s)
    logged = np.array([r.t for r in records], dtype=float)
    true = mapping(logged)
    if np.any(np.abs(true - logged) > max_correction_s + 1e-9):
        raise DataError(f"clock correction exceeds {max_correction_s} s")
    if np.any((np.diff(true) < 0) & (np.diff(logged) >= 0)):
        raise DataError("drift correction produced non-monotone timestamps")
    return [dataclasses.replace(r, t=float(tt)) for r, tt in zip(records, true)]


# --------------------------------------------------------------------------
# Resampling

_FIELD_UNITS = {
    "ch4_ppm": Unit.PPM,
    "temp_c": Unit.DEG_C,
    "ch4_mg_m3": Unit.MG_M3,
    "co2_mg_m3": Unit.MG_M3,
    "flow_l_min": Unit.L_MIN,
    "pressure_mbar": Unit.MBAR,
}


def nominal_dt(records: Sequence) -> float:
    if records and isinstance(records[0], SnifferRecord):
        return SNIFFER_DT
    return SCOUT_DT


def to_series(records: Sequence, field: str | Callable, *, dt: float | None = None,
              t0: float | None = None, n: int | None = None, unit=None,
              counts: Counter | None = None) -> Series:
    """Place records on a uniform grid by nearest-cell assignment.

    Every record snaps to the grid cell nearest its timestamp, so record
    spacing up to 1.5*dt never leaves an empty cell while a longer gap does.
    Empty cells are invalid.  Values are copied, never interpolated.  When
    two records land in one cell the later one wins and
    ``meta["duplicates"]`` counts the collision.
    """
    if not records:
        raise EmptySeriesError("no records to place on a grid")
    dt = nominal_dt(records) if dt is None else float(dt)
    get = field if callable(field) else (lambda r: getattr(r, field))
    if unit is None:
        unit = _FIELD_UNITS.get(field, Unit.PPM) if isinstance(field, str) else Unit.PPM
    t = np.array([r.t for r in records], dtype=float)
    if np.any(np.diff(t) < 0):
        raise DataError("records must be time-sorted")
    t0 = float(t[0]) if t0 is None else float(t0)
    idx = np.rint((t - t0) / dt).astype(np.int64)
    if n is None:
        n = int(idx[-1]) + 1
    values = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    seen = np.zeros(n, dtype=bool)
    dup = 0
    for k, rec in zip(idx.tolist(), records):
        if not 0 <= k < n:
            continue
        if seen[k]:
            dup += 1
        seen[k] = True
        v = get(rec)
        if v is None or not math.isfinite(v):
            values[k] = np.nan
            valid[k] = False
        else:
            values[k] = v
            valid[k] = True
    if counts is not None and dup:
        counts["duplicates"] += dup
    return Series(t0, dt, values, valid, unit, meta={"duplicates": dup, "empty_cells": int(n - seen.sum())})
