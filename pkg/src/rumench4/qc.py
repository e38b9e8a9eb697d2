"""Quality control: warm-up stripping, sample classification, pump-reset
exclusion, calibration checks and retention reporting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .core import IntervalSet, Series, Unit
from .errors import ConfigError, DataError, InsufficientDataError, UnitError

UNSET = -1
SECONDS_PER_WEEK = 604800.0


class SampleClass(IntEnum):
    VALID = 0
    MISSING = 1
    WARMUP = 2
    SATURATED = 3
    LOW = 4
    DROP_EVENT = 5
    EXCLUDED_ARTIFACT = 6
    EXCLUDED_FLOW = 7

    @property
    def label(self) -> str:
        return self.name.lower()


RETAINED = (SampleClass.VALID, SampleClass.SATURATED, SampleClass.DROP_EVENT)


@dataclass(frozen=True)
class QCConfig:
    warmup_s: float = 180.0
    saturation_ppm: float = 50000.0
    low_ppm: float = 1000.0
    pre_exclusion_s: float = 2.0
    post_exclusion_s: float = 40.0
    min_flow_l_min: float = 0.75
    ambient_band_ppm: tuple[float, float] = (1.8, 2.1)
    max_weekly_drift_frac: float = 0.005

    def __post_init__(self):
        for name in ("saturation_ppm", "low_ppm", "min_flow_l_min", "max_weekly_drift_frac"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("warmup_s", "pre_exclusion_s", "post_exclusion_s"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.low_ppm < self.saturation_ppm:
            raise ConfigError("low_ppm must be below saturation_ppm")
        lo, hi = self.ambient_band_ppm
        if not 0 < lo <= hi:
            raise ConfigError("ambient_band_ppm must be an ordered positive pair")


def _flags(series: Series) -> np.ndarray:
    if series.flags is None:
        return np.full(len(series), UNSET, dtype=np.int8)
    return series.flags.copy()


def strip_initialization(series: Series, cfg: QCConfig = QCConfig()) -> Series:
    """Invalidate every sample recorded less than ``warmup_s`` after the first."""
    flags = _flags(series)
    if cfg.warmup_s <= 0 or len(series) == 0:
        return series
    warm = (series.times - series.t0) < cfg.warmup_s
    flags[warm & (flags == UNSET)] = SampleClass.WARMUP
    return series.replace(flags=flags).with_valid(~warm)


def classify_scout(series: Series, cfg: QCConfig = QCConfig(),
                   drops: IntervalSet | None = None) -> np.ndarray:
    """Assign one :class:`SampleClass` code per sample.

    Flags already set upstream (warm-up, exclusions) are kept; remaining
    invalid samples are ``missing``.  Among valid samples the precedence is
    saturated > drop_event > low > valid, so a sub-threshold value inside a
    detected drop counts as part of the drop.
    """
    if series.unit != Unit.PPM:
        raise UnitError(f"expected ppm, got {series.unit}")
    flags = _flags(series)
    free = flags == UNSET
    v = series.values
    ok = series.valid & free
    in_drop = drops.to_mask(series) if drops is not None else np.zeros(len(series), bool)
    with np.errstate(invalid="ignore"):
        sat = ok & (v >= cfg.saturation_ppm)
        low = ok & (v < cfg.low_ppm)
    flags[free & ~series.valid] = SampleClass.MISSING
    flags[ok] = SampleClass.VALID
    flags[low] = SampleClass.LOW
    flags[ok & in_drop & ~sat] = SampleClass.DROP_EVENT
    flags[sat] = SampleClass.SATURATED
    return flags


def classify_validity(series: Series) -> np.ndarray:
    """Generic classification: keep upstream flags, else valid or missing."""
    flags = _flags(series)
    free = flags == UNSET
    flags[free & series.valid] = SampleClass.VALID
    flags[free & ~series.valid] = SampleClass.MISSING
    return flags


def detect_pump_resets(flow: Series, cfg: QCConfig = QCConfig()) -> IntervalSet:
    """Maximal sub-threshold flow spans, unpadded.

    Each event starts at its first sample below ``min_flow_l_min`` and ends
    one sample interval after its last one.
    """
    with np.errstate(invalid="ignore"):
        low = flow.valid & (flow.values < cfg.min_flow_l_min)
    return IntervalSet.from_mask(flow.times, low, flow.dt)


def apply_exclusions(series: Series, events: IntervalSet, cfg: QCConfig = QCConfig(),
                     flow: Series | None = None) -> Series:
    """Invalidate samples inside padded reset windows or with low flow.

    Events are widened to ``[start - pre_exclusion_s, end + post_exclusion_s)``
    and merged.  Already-invalid samples keep their original class.
    """
    flags = _flags(series)
    padded = events.pad(cfg.pre_exclusion_s, cfg.post_exclusion_s)
    art = padded.to_mask(series) & series.valid
    flags[art & (flags == UNSET)] = SampleClass.EXCLUDED_ARTIFACT
    bad = art
    if flow is not None:
        if not flow.same_grid(series):
            raise DataError("flow series must share the concentration grid")
        with np.errstate(invalid="ignore"):
            low = flow.valid & (flow.values < cfg.min_flow_l_min) & series.valid & ~art
        flags[low & (flags == UNSET)] = SampleClass.EXCLUDED_FLOW
        bad = bad | low
    return series.replace(flags=flags).with_valid(~bad)


def ambient_zero_check(series: Series, cfg: QCConfig = QCConfig()) -> tuple[bool, float]:
    """Pass iff the median of valid samples lies inside the ambient band."""
    if not series.valid.any():
        raise InsufficientDataError("ambient segment has no valid samples")
    med = float(np.median(series.values[series.valid]))
    lo, hi = cfg.ambient_band_ppm
    return lo <= med <= hi, med


def weekly_drift_check(baselines: Sequence[tuple[float, float]],
                       cfg: QCConfig = QCConfig()) -> tuple[bool, float]:
    """Relative baseline drift per week from a least-squares line."""
    if len(baselines) < 2:
        raise InsufficientDataError("need at least two baseline checks")
    t = np.array([b[0] for b in baselines], dtype=float)
    y = np.array([b[1] for b in baselines], dtype=float)
    if t.max() - t.min() < 86400.0:
        raise InsufficientDataError("baseline checks must span at least 24 h")
    tc = t - t.mean()
    slope = float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))
    frac = abs(slope) * SECONDS_PER_WEEK / float(np.mean(y))
    return frac <= cfg.max_weekly_drift_frac, frac


@dataclass
class QCReport:
    counts: dict[str, int]
    total: int
    non_missing: int
    retention_frac: float | None
    saturation_frac: float | None
    low_frac: float | None
    drop_frac: float | None
    denominator: str = "all non-missing samples (warm-up included)"
    config: dict = field(default_factory=dict)

    @property
    def retention_defined(self) -> bool:
        return self.retention_frac is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["retention_defined"] = self.retention_defined
        return d


def retention_report(classes, cfg: QCConfig | None = None) -> QCReport:
    """Summarize a per-sample classification.

    Retained samples are valid, saturated and drop_event ones; the
    denominator is every sample that is not ``missing``.  With no
    non-missing samples the fractions are ``None``.
    """
    c = np.asarray(classes)
    if c.size == 0:
        raise InsufficientDataError("empty classification")
    counts = {k.label: int(np.count_nonzero(c == k)) for k in SampleClass}
    if sum(counts.values()) != c.size:
        raise DataError("classification contains unassigned samples")
    denom = c.size - counts["missing"]

    def frac(n):
        return None if denom == 0 else n / denom

    retained = sum(counts[k.label] for k in RETAINED)
    return QCReport(
        counts=counts,
        total=int(c.size),
        non_missing=int(denom),
        retention_frac=frac(retained),
        saturation_frac=frac(counts["saturated"]),
        low_frac=frac(counts["low"]),
        drop_frac=frac(counts["drop_event"]),
        config={} if cfg is None else {k: (list(v) if isinstance(v, tuple) else v)
                                        for k, v in asdict(cfg).items()},
    )
