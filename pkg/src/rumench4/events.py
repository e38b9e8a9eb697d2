"""Eructation drops, sniffer peaks and behavior-triggered responses."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import BehaviorInterval, BehaviorLabel, IntervalSet, Series, runs
from .errors import ConfigError, InsufficientDataError

log = logging.getLogger(__name__)

ERUCTATION_DROP = "eructation_drop"
SNIFFER_PEAK = "sniffer_peak"


@dataclass(frozen=True)
class EventConfig:
    drop_min_ppm: float = 5000.0
    drop_max_span_s: float = 60.0
    peak_min_prominence_ppm: float = 50.0
    peak_min_separation_s: float = 60.0
    posture_window_s: float = 900.0
    feeding_lag_band_s: tuple[float, float] = (900.0, 2700.0)
    feeding_smooth_s: float = 300.0
    feeding_agree_s: float = 300.0
    ceiling_ppm: float = 50000.0

    def __post_init__(self):
        for name in ("drop_min_ppm", "drop_max_span_s", "peak_min_prominence_ppm",
                     "peak_min_separation_s", "posture_window_s", "feeding_smooth_s",
                     "feeding_agree_s", "ceiling_ppm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        lo, hi = self.feeding_lag_band_s
        if not 0 <= lo < hi:
            raise ConfigError("feeding_lag_band_s must be an ordered pair")


@dataclass(frozen=True)
class EmissionEvent:
    """A detected event; ``end`` is exclusive (last sample time + dt)."""

    kind: str
    start: float
    end: float
    magnitude_ppm: float
    source: str
    peak_t: float | None = None


def events_to_intervals(events: Iterable[EmissionEvent]) -> IntervalSet:
    return IntervalSet.from_pairs((e.start, e.end) for e in events)


# --------------------------------------------------------------------------
# Eructation drops


def detect_eructations(scout: Series, cfg: EventConfig = EventConfig()) -> list[EmissionEvent]:
    """Abrupt concentration drops in the in-rumen series.

    Inside each strictly decreasing run of valid samples, every start
    sample whose value falls by at least ``drop_min_ppm`` within
    ``drop_max_span_s`` yields a candidate span; overlapping candidates are
    merged.  Magnitude is the total decrease over the merged span.  Runs
    may start on the saturation ceiling.
    """
    v, ok = scout.values, scout.valid
    n = len(scout)
    if n < 2:
        return []
    with np.errstate(invalid="ignore"):
        dec = ok[:-1] & ok[1:] & (v[1:] < v[:-1])
    span = int(math.floor(cfg.drop_max_span_s / scout.dt + 1e-9))
    events = []
    for a, b in zip(*runs(dec)):
        # samples a..b form one strictly decreasing run
        if v[a] - v[b] < cfg.drop_min_ppm:
            continue
        i = np.arange(a, b)
        j = np.minimum(i + span, b)
        cand = v[i] - v[j] >= cfg.drop_min_ppm
        if not cand.any():
            continue
        ci, cj = i[cand], j[cand]
        s0, e0 = int(ci[0]), int(cj[0])
        for si, ej in zip(ci[1:].tolist(), cj[1:].tolist()):
            if si <= e0:
                e0 = max(e0, ej)
            else:
                events.append(_drop_event(scout, s0, e0))
                s0, e0 = si, ej
        events.append(_drop_event(scout, s0, e0))
    return events


def _drop_event(s: Series, i: int, j: int) -> EmissionEvent:
    t = s.t0 + s.dt * np.array([i, j])
    return EmissionEvent(ERUCTATION_DROP, float(t[0]), float(t[1] + s.dt),
                         float(s.values[i] - s.values[j]), "scout")


# --------------------------------------------------------------------------
# Peaks


def local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima; flat tops report their middle sample."""
    peaks = []
    n = x.size
    i = 1
    while i < n - 1:
        if x[i - 1] < x[i]:
            j = i + 1
            while j < n - 1 and x[j] == x[i]:
                j += 1
            if x[j] < x[i]:
                peaks.append((i + j - 1) // 2)
                i = j
                continue
            i = j
            continue
        i += 1
    return np.array(peaks, dtype=np.int64)


def _sparse_min(x: np.ndarray) -> list[np.ndarray]:
    table = [x]
    k = 1
    while 2 * k <= x.size:
        prev = table[-1]
        table.append(np.minimum(prev[:-k], prev[k:]))
        k *= 2
    return table


def _range_min(table, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Minimum of x[lo..hi] inclusive, vectorized."""
    length = hi - lo + 1
    lev = np.floor(np.log2(length)).astype(int)
    out = np.empty(lo.size)
    for L in np.unique(lev):
        sel = lev == L
        row = table[L]
        out[sel] = np.minimum(row[lo[sel]], row[hi[sel] - (1 << L) + 1])
    return out


def peak_prominences(x: np.ndarray, peaks: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Topographic prominence of each peak with its left and right bases.

    From each peak the search extends in both directions until a strictly
    higher sample or the array edge; the reference level is the higher of
    the two minima found, and prominence is the peak height above it.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    prev_greater = np.full(n, -1, dtype=np.int64)
    next_greater = np.full(n, n, dtype=np.int64)
    stack: list[int] = []
    xl = x.tolist()
    for i, xi in enumerate(xl):
        while stack and xl[stack[-1]] <= xi:
            stack.pop()
        prev_greater[i] = stack[-1] if stack else -1
        stack.append(i)
    stack = []
    for i in range(n - 1, -1, -1):
        xi = xl[i]
        while stack and xl[stack[-1]] <= xi:
            stack.pop()
        next_greater[i] = stack[-1] if stack else n
        stack.append(i)
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size == 0:
        e = np.empty(0)
        return e, e.astype(np.int64), e.astype(np.int64)
    table = _sparse_min(x)
    lo = prev_greater[peaks] + 1
    hi = next_greater[peaks] - 1
    left_min = _range_min(table, lo, peaks)
    right_min = _range_min(table, peaks, hi)
    prom = x[peaks] - np.maximum(left_min, right_min)
    return prom, lo, hi


def detect_peaks(normalized: Series, cfg: EventConfig = EventConfig()) -> list[EmissionEvent]:
    """Prominent, well-separated maxima of a baseline-normalized series.

    Each run of valid samples is searched separately.  Peaks below the
    prominence threshold are dropped first; the separation rule then keeps
    the higher peak of any pair closer than ``peak_min_separation_s``.
    Magnitude is the prominence; start/end bracket the part of the peak
    above half its prominence.
    """
    s = normalized
    cand = []
    for a, b in zip(*runs(s.valid)):
        x = s.values[a:b]
        pk = local_maxima(x)
        if pk.size == 0:
            continue
        prom, _, _ = peak_prominences(x, pk)
        keep = prom >= cfg.peak_min_prominence_ppm
        for p, pr in zip(pk[keep].tolist(), prom[keep].tolist()):
            cand.append((a + p, pr, a, b))
    min_sep = cfg.peak_min_separation_s / s.dt
    order = sorted(range(len(cand)), key=lambda k: (-s.values[cand[k][0]], cand[k][0]))
    kept: list[int] = []
    for k in order:
        p = cand[k][0]
        if all(abs(p - cand[q][0]) >= min_sep - 1e-9 for q in kept):
            kept.append(k)
    out = []
    for k in sorted(kept, key=lambda k: cand[k][0]):
        p, pr, a, b = cand[k]
        x = s.values
        ref = x[p] - pr / 2.0
        i = p
        while i > a and x[i - 1] > ref:
            i -= 1
        j = p
        while j < b - 1 and x[j + 1] > ref:
            j += 1
        out.append(EmissionEvent(SNIFFER_PEAK, s.t0 + i * s.dt, s.t0 + (j + 1) * s.dt,
                                 float(pr), "sniffer", peak_t=s.t0 + p * s.dt))
    return out


# --------------------------------------------------------------------------
# Behavior responses


@dataclass(frozen=True)
class TransitionResponse:
    t: float
    response_ppm: float
    latency_s: float
    pre_mean_ppm: float
    censored: bool


@dataclass
class PostureResult:
    transitions: list[TransitionResponse] = field(default_factory=list)
    skipped: int = 0

    def _uncensored(self):
        return np.array([r.response_ppm for r in self.transitions if not r.censored])

    @property
    def n(self) -> int:
        return len(self.transitions)

    @property
    def n_censored(self) -> int:
        return sum(r.censored for r in self.transitions)

    @property
    def mean_ppm(self) -> float:
        x = self._uncensored()
        return float(x.mean()) if x.size else float("nan")

    @property
    def sd_ppm(self) -> float:
        x = self._uncensored()
        return float(x.std(ddof=1)) if x.size > 1 else float("nan")

    @property
    def latency_mean_s(self) -> float:
        x = [r.latency_s for r in self.transitions if not r.censored]
        return float(np.mean(x)) if x else float("nan")

    @property
    def latency_sd_s(self) -> float:
        x = [r.latency_s for r in self.transitions if not r.censored]
        return float(np.std(x, ddof=1)) if len(x) > 1 else float("nan")

    def to_dict(self) -> dict:
        return {
            "n": self.n, "n_censored": self.n_censored, "skipped": self.skipped,
            "mean_ppm": self.mean_ppm, "sd_ppm": self.sd_ppm,
            "latency_mean_s": self.latency_mean_s, "latency_sd_s": self.latency_sd_s,
        }


def posture_response(scout: Series, behavior: Sequence[BehaviorInterval],
                     cfg: EventConfig = EventConfig(),
                     labels: Sequence[BehaviorLabel] = (BehaviorLabel.SITTING,)) -> PostureResult:
    """Concentration response at each postural transition.

    A transition is the start of an interval with one of ``labels``
    (standing-to-sitting by default).  Response is the maximum over
    ``[t, t + W]`` minus the mean over ``[t - W, t)``.  Responses whose
    maximum sits on the ceiling are censored and left out of mean/sd.
    Transitions whose windows leave the series are skipped.
    """
    W = cfg.posture_window_s
    times, v, ok = scout.times, scout.values, scout.valid
    result = PostureResult()
    want = {BehaviorLabel(l) for l in labels}
    for b in behavior:
        if b.label not in want:
            continue
        t = b.start
        if t - W < scout.t0 or t + W > times[-1] + 1e-9:
            result.skipped += 1
            log.warning("posture transition at %.0f skipped: window leaves the series", t)
            continue
        pre = ok & (times >= t - W) & (times < t)
        post = ok & (times >= t) & (times <= t + W)
        if not pre.any() or not post.any():
            result.skipped += 1
            continue
        idx = np.flatnonzero(post)
        k = idx[np.argmax(v[idx])]
        pre_mean = float(v[pre].mean())
        result.transitions.append(TransitionResponse(
            t, float(v[k]) - pre_mean, float(times[k] - t), pre_mean,
            bool(v[k] >= cfg.ceiling_ppm)))
    return result


@dataclass
class FeedingLagResult:
    lag_s: float
    confidence: float
    inconclusive: bool
    n_events: int
    chance_level: float
    taus: np.ndarray
    profile: np.ndarray

    def to_dict(self) -> dict:
        return {"lag_s": self.lag_s, "confidence": self.confidence,
                "inconclusive": self.inconclusive, "n_events": self.n_events,
                "chance_level": self.chance_level}


def rise_rate(scout: Series, ceiling: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-step rate of concentration rise (ppm/s) at step midpoints.

    Falling steps (vents) and steps ending on the ceiling are excluded
    (NaN), so the rate tracks gas production rather than release.
    """
    v = scout.values
    d = (v[1:] - v[:-1]) / scout.dt
    with np.errstate(invalid="ignore"):
        use = scout.valid[1:] & scout.valid[:-1] & (d >= 0) & (v[1:] < ceiling)
    mid = scout.times[:-1] + scout.dt / 2.0
    return mid, np.where(use, d, np.nan)


def feeding_lag(scout: Series, feeding_starts: Sequence[float],
                cfg: EventConfig = EventConfig()) -> FeedingLagResult:
    """Delay between feeding onset and the strongest rise in concentration.

    For each feeding start ``f`` and each candidate lag ``tau`` in the
    configured band (clipped to the series), the mean rise rate over
    ``f + tau +- feeding_smooth_s`` gives an event-triggered profile.  The
    pooled lag is the argmax of the mean profile; confidence is the share
    of events whose own argmax lies within ``feeding_agree_s`` of it.
    """
    starts = sorted(float(f) for f in feeding_starts)
    if len(starts) < 3:
        raise InsufficientDataError("feeding lag needs at least three feeding events")
    lo, hi = cfg.feeding_lag_band_s
    hi = min(hi, scout.t_end - scout.t0)
    if hi < lo:
        raise ConfigError("feeding lag band is empty after clipping to the series")
    taus = np.arange(lo, hi + 1e-9, scout.dt)
    mid, rate = rise_rate(scout, cfg.ceiling_ppm)
    have = np.isfinite(rate)
    csum = np.concatenate([[0.0], np.cumsum(np.where(have, rate, 0.0))])
    ccnt = np.concatenate([[0], np.cumsum(have)])
    h = cfg.feeding_smooth_s
    profiles = []
    for f in starts:
        c = f + taus
        a = np.searchsorted(mid, c - h, side="left")
        b = np.searchsorted(mid, c + h, side="right")
        cnt = ccnt[b] - ccnt[a]
        with np.errstate(invalid="ignore", divide="ignore"):
            profiles.append(np.where(cnt > 0, (csum[b] - csum[a]) / cnt, np.nan))
    P = np.array(profiles)
    usable = np.isfinite(P).any(axis=1)
    span = hi - lo
    chance = min(1.0, 2.0 * cfg.feeding_agree_s / span) if span > 0 else 1.0
    if not usable.any():
        return FeedingLagResult(float("nan"), chance, True, len(starts), chance, taus,
                                np.full(taus.size, np.nan))
    with np.errstate(invalid="ignore"):
        pooled = np.nanmean(P[usable], axis=0)
    lag = float(taus[np.nanargmax(pooled)])
    flat = np.nanmax(pooled) - np.nanmin(pooled) <= 1e-9 * (1.0 + abs(np.nanmax(pooled)))
    if flat:
        return FeedingLagResult(lag, chance, True, len(starts), chance, taus, pooled)
    agree = 0
    for prof in P[usable]:
        if np.isfinite(prof).any():
            agree += abs(taus[np.nanargmax(prof)] - lag) <= cfg.feeding_agree_s
    confidence = agree / len(starts)
    return FeedingLagResult(lag, confidence, confidence <= chance, len(starts), chance, taus, pooled)
