"""CO2-proxy animal-presence detection and ambient CH4 baseline removal."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import IntervalSet, Series, Unit, runs
from .errors import AlignmentError, ConfigError, InsufficientDataError, UnitError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BaselineConfig:
    stage1_abs_ppm: float = 350.0
    stage1_diff_ppm: float = 175.0
    stage2_abs_ppm: float = 250.0
    stage2_diff_ppm: float = 125.0
    co2_smooth_window: int = 2000
    ch4_smooth_window: int = 1000
    min_absence_frac: float = 0.05
    merge_gap_s: float = 30.0

    def __post_init__(self):
        if not (self.stage2_abs_ppm < self.stage1_abs_ppm and self.stage2_diff_ppm < self.stage1_diff_ppm):
            raise ConfigError("stage-2 thresholds must be below stage-1 thresholds")
        if min(self.co2_smooth_window, self.ch4_smooth_window) < 3:
            raise ConfigError("smoothing windows must be at least 3 samples")
        if min(self.stage2_abs_ppm, self.stage2_diff_ppm) <= 0:
            raise ConfigError("thresholds must be positive")


@dataclass(frozen=True, eq=False)
class PresenceMask:
    """Per-sample animal-influence flags on a series grid."""

    t0: float
    dt: float
    mask: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def like(cls, s: Series, mask, warnings=()) -> "PresenceMask":
        return cls(s.t0, s.dt, mask, tuple(warnings))

    def __len__(self) -> int:
        return self.mask.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.mask.size)

    @property
    def intervals(self) -> IntervalSet:
        return IntervalSet.from_mask(self.times, self.mask, self.dt)

    def union(self, other: "PresenceMask") -> "PresenceMask":
        return PresenceMask(self.t0, self.dt, self.mask | other.mask, self.warnings + other.warnings)


def _require_ppm(s: Series):
    if s.unit != Unit.PPM:
        raise UnitError(f"expected ppm, got {s.unit}")


def first_difference(s: Series) -> np.ndarray:
    """``x[k] - x[k-1]`` where both samples are valid, else NaN (k=0 is NaN)."""
    d = np.full(len(s), np.nan)
    if len(s) > 1:
        d[1:] = np.diff(s.values)
    return d


def centered_mean(x: np.ndarray, w: int) -> np.ndarray:
    """Centred ``w``-point running mean; windows are truncated at the ends."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    k = np.arange(n)
    lo = np.clip(k - w // 2, 0, n)
    hi = np.clip(k - w // 2 + w, 0, n)
    return (c[hi] - c[lo]) / (hi - lo)


def _daily_median(s: Series) -> tuple[np.ndarray, list[str]]:
    day = np.floor(s.times / 86400.0).astype(np.int64)
    med = np.full(len(s), np.nan)
    warnings = []
    for d in np.unique(day):
        sel = day == d
        ok = sel & s.valid
        if ok.any():
            med[sel] = np.median(s.values[ok])
        else:
            warnings.append(f"UTC day {int(d)} has no valid samples; left unflagged")
    return med, warnings


def detect_presence_stage1(co2_ppm: Series, cfg: BaselineConfig = BaselineConfig()) -> PresenceMask:
    """Flag samples far above their UTC-day median or changing abruptly."""
    _require_ppm(co2_ppm)
    med, warnings = _daily_median(co2_ppm)
    for w in warnings:
        log.warning(w)
    d = first_difference(co2_ppm)
    with np.errstate(invalid="ignore"):
        flag = (co2_ppm.values - med > cfg.stage1_abs_ppm) | (np.abs(d) > cfg.stage1_diff_ppm)
    return PresenceMask.like(co2_ppm, flag & co2_ppm.valid & np.isfinite(med), warnings)


def _bridge(times: np.ndarray, values: np.ndarray, use: np.ndarray) -> np.ndarray:
    """Linear interpolation across samples where ``use`` is False."""
    return np.interp(times, times[use], values[use])


def refine_presence_stage2(co2_ppm: Series, stage1: PresenceMask,
                           cfg: BaselineConfig = BaselineConfig()) -> PresenceMask:
    """Second pass against a smoothed CO2 background; returns the union."""
    _require_ppm(co2_ppm)
    if len(stage1) != len(co2_ppm):
        raise AlignmentError("stage-1 mask does not match the series")
    times, v = co2_ppm.times, co2_ppm.values
    use = co2_ppm.valid & ~stage1.mask
    warnings = []
    if np.count_nonzero(use) < cfg.co2_smooth_window:
        pool = v[use] if use.any() else v[co2_ppm.valid]
        if pool.size == 0:
            return stage1
        smooth = np.full(len(v), float(np.median(pool)))
        warnings.append("too few unflagged samples for the smoothed CO2 baseline; using global median")
        log.warning(warnings[-1])
    else:
        smooth = centered_mean(_bridge(times, v, use), cfg.co2_smooth_window)
    d = first_difference(co2_ppm)
    with np.errstate(invalid="ignore"):
        new = (v - smooth > cfg.stage2_abs_ppm) | (np.abs(d) > cfg.stage2_diff_ppm)
    new &= co2_ppm.valid
    return stage1.union(PresenceMask.like(co2_ppm, new, warnings))


def detect_presence(co2_ppm: Series, cfg: BaselineConfig = BaselineConfig()) -> PresenceMask:
    return refine_presence_stage2(co2_ppm, detect_presence_stage1(co2_ppm, cfg), cfg)


def ambient_baseline(ch4_ppm: Series, presence: PresenceMask,
                     cfg: BaselineConfig = BaselineConfig()) -> Series:
    """Time-varying ambient CH4 from animal-free samples.

    A running mean over consecutive absence samples (presence and invalid
    samples skipped) is evaluated at each absence sample and linearly
    bridged across everything else.  UTC days whose absence share is
    below ``min_absence_frac`` are listed in ``meta["low_confidence_days"]``.
    """
    _require_ppm(ch4_ppm)
    if len(presence) != len(ch4_ppm):
        raise AlignmentError("presence mask does not match the series")
    times = ch4_ppm.times
    absent = ch4_ppm.valid & ~presence.mask
    idx = np.flatnonzero(absent)
    if idx.size == 0:
        raise InsufficientDataError("no animal-free samples for the ambient baseline")
    smooth = centered_mean(ch4_ppm.values[idx], cfg.ch4_smooth_window)
    base = np.interp(times, times[idx], smooth)
    day = np.floor(times / 86400.0).astype(np.int64)
    low = []
    for d in np.unique(day):
        sel = day == d
        if np.count_nonzero(absent & sel) < cfg.min_absence_frac * np.count_nonzero(sel):
            low.append(int(d) * 86400)
    return ch4_ppm.replace(values=base, valid=np.ones(len(base), bool), flags=None,
                           meta={"low_confidence_days": low})


def normalize(ch4_ppm: Series, baseline: Series) -> Series:
    """Baseline-subtracted signal, floored at zero."""
    if not ch4_ppm.same_grid(baseline):
        raise AlignmentError("signal and baseline are on different grids")
    ok = ch4_ppm.valid & baseline.valid
    out = np.where(ok, np.maximum(ch4_ppm.values - baseline.values, 0.0), np.nan)
    return ch4_ppm.replace(values=out, valid=ok)


def merge_runs(mask, max_gap: int) -> tuple[np.ndarray, np.ndarray]:
    """Runs of True, merging runs separated by fewer than ``max_gap`` samples."""
    s, e = runs(mask)
    if s.size == 0:
        return s, e
    keep_s, keep_e = [int(s[0])], [int(e[0])]
    for a, b in zip(s[1:].tolist(), e[1:].tolist()):
        if a - keep_e[-1] < max_gap:
            keep_e[-1] = b
        else:
            keep_s.append(a)
            keep_e.append(b)
    return np.array(keep_s), np.array(keep_e)


def presence_stats(presence: PresenceMask, dt: float | None = None,
                   merge_gap_s: float = 30.0) -> dict:
    """Percent of time flagged, events per day and mean event duration.

    Flagged runs separated by gaps shorter than ``merge_gap_s`` count as
    one event.
    """
    dt = presence.dt if dt is None else dt
    n = len(presence)
    gap = int(np.ceil(merge_gap_s / dt - 1e-9))
    s, e = merge_runs(presence.mask, gap)
    days = n * dt / 86400.0
    return {
        "pct_time": 100.0 * np.count_nonzero(presence.mask) / n if n else 0.0,
        "events": int(s.size),
        "events_per_day": s.size / days if days > 0 else 0.0,
        "mean_event_s": float(np.mean((e - s) * dt)) if s.size else 0.0,
    }
