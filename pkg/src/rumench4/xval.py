"""Scale-dependent sliding-window correlation between the in-rumen and
ambient series, with detrending, AR(1) effective sample sizes and
Benjamini-Hochberg control across windows."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .baseline import PresenceMask
from .core import IntervalSet, Series, runs
from .errors import AlignmentError, DomainError, InsufficientDataError

DEFAULT_SCALES_MIN = (5, 10, 15, 20, 25, 30, 35, 40)
NEFF_FLOOR = 3.0


@dataclass(frozen=True, eq=False)
class PairedSeries:
    """In-rumen (x) and ambient (y) samples on the in-rumen grid."""

    t0: float
    dt: float
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return self.x.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.x.size)

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


def _bin_index(pairs_t0: float, dt: float, t: np.ndarray) -> np.ndarray:
    # bins are centred on the in-rumen sample times: [t_k - dt/2, t_k + dt/2)
    return np.floor((t - (pairs_t0 - dt / 2.0)) / dt + 1e-9).astype(np.int64)


def align_pair(scout: Series, sniffer: Series, min_frac: float = 0.5) -> PairedSeries:
    """Bin the 1 Hz ambient series onto the in-rumen grid.

    Each in-rumen sample gets the mean of the valid ambient samples within
    +-dt/2 of it, provided at least ``min_frac`` of the bin (5 of 10 at
    the nominal rates) is valid.  A pair is valid where both sides are.
    """
    lo = max(scout.t0 - scout.dt / 2, sniffer.t0)
    hi = min(scout.t_end - scout.dt / 2, sniffer.t_end)
    if hi <= lo:
        raise AlignmentError("in-rumen and ambient series do not overlap")
    n = len(scout)
    k = _bin_index(scout.t0, scout.dt, sniffer.times)
    inside = (k >= 0) & (k < n)
    use = inside & sniffer.valid
    sums = np.bincount(k[use], weights=sniffer.values[use], minlength=n)[:n]
    cnt = np.bincount(k[use], minlength=n)[:n]
    need = math.ceil(min_frac * scout.dt / sniffer.dt - 1e-9)
    y_ok = cnt >= need
    y = np.full(n, np.nan)
    y[y_ok] = sums[y_ok] / cnt[y_ok]
    ok = y_ok & scout.valid
    return PairedSeries(scout.t0, scout.dt, scout.values.copy(), y, ok)


def presence_on_pairs(pairs: PairedSeries, presence: PresenceMask) -> np.ndarray:
    """Pair bins in which at least half of the ambient samples are flagged."""
    n = len(pairs)
    k = _bin_index(pairs.t0, pairs.dt, presence.times)
    inside = (k >= 0) & (k < n)
    tot = np.bincount(k[inside], minlength=n)[:n]
    hit = np.bincount(k[inside], weights=presence.mask[inside].astype(float), minlength=n)[:n]
    return (tot > 0) & (hit >= 0.5 * np.maximum(tot, 1))


def gate_events(pairs: PairedSeries, presence: PresenceMask, eructations: Sequence,
                min_length_s: float = 60.0 * DEFAULT_SCALES_MIN[0]) -> IntervalSet:
    """Analysis segments: animal present, ambient reading positive, and at
    least one eructation inside.

    A segment is a maximal run of pair bins that are flagged present and
    whose ambient value is not a valid non-positive reading.  Segments
    shorter than ``min_length_s`` are dropped.
    """
    pres = presence_on_pairs(pairs, presence)
    with np.errstate(invalid="ignore"):
        zero = np.isfinite(pairs.y) & (pairs.y <= 0)
    cond = pres & ~zero
    times = pairs.times
    keep = []
    for a, b in zip(*runs(cond)):
        s, e = times[a], times[b - 1] + pairs.dt
        if e - s < min_length_s - 1e-9:
            continue
        if any(ev.start < e and ev.end > s for ev in eructations):
            keep.append((s, e))
    return IntervalSet.from_pairs(keep)


# --------------------------------------------------------------------------
# Window statistics


def detrend_linear(x, t=None) -> np.ndarray:
    """Residuals from the ordinary least-squares line through (t, x)."""
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        raise InsufficientDataError("detrending needs at least 3 samples")
    t = np.arange(x.size, dtype=float) if t is None else np.asarray(t, dtype=float)
    tc = t - t.mean()
    xc = x - x.mean()
    stt = np.dot(tc, tc)
    slope = np.dot(tc, xc) / stt if stt > 0 else 0.0
    return xc - slope * tc


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    return float(np.dot(xc, yc) / den) if den > 0 else float("nan")


def signed_r(x, y) -> tuple[float, float]:
    """Signed regression coefficient ``sign(slope) * sqrt(R^2)`` and slope.

    Regresses y on x by least squares.  Returns NaNs when x has no variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise InsufficientDataError("signed_r needs at least 3 pairs")
    xc, yc = x - x.mean(), y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx <= 0:
        return float("nan"), float("nan")
    if syy <= 0:
        return float("nan"), 0.0
    slope = np.dot(xc, yc) / sxx
    resid = yc - slope * xc
    r2 = min(max(1.0 - np.dot(resid, resid) / syy, 0.0), 1.0)
    return float(math.copysign(math.sqrt(r2), slope)), float(slope)


def lag1_autocorr(x) -> float:
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    den = np.dot(xc, xc)
    return float(np.dot(xc[:-1], xc[1:]) / den) if den > 0 else 0.0


def neff_from_rho(n: float, rho_x: float, rho_y: float) -> float:
    """``n (1 - rx ry) / (1 + rx ry)`` clipped to ``[3, n]``."""
    prod = rho_x * rho_y
    raw = n * (1.0 - prod) / (1.0 + prod) if prod > -1.0 else float(n)
    return float(min(max(raw, NEFF_FLOOR), n))


def ar1_neff(x, y) -> tuple[float, float, float]:
    """Lag-1 autocorrelations of both series and the AR(1) effective size."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise ValueError("series differ in length")
    if x.size < 10:
        raise InsufficientDataError("AR(1) correction needs at least 10 pairs")
    rx, ry = lag1_autocorr(x), lag1_autocorr(y)
    return rx, ry, neff_from_rho(x.size, rx, ry)


def p_from_r(r: float, n_eff: float) -> float:
    """Two-sided p-value of a correlation on ``n_eff - 2`` degrees of freedom."""
    if not n_eff >= NEFF_FLOOR - 1e-12:
        raise DomainError("n_eff must be at least 3")
    if not math.isfinite(r):
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    df = n_eff - 2.0
    t = r * math.sqrt(df / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def bh_fdr(p_values) -> np.ndarray:
    """Benjamini-Hochberg q-values, returned in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


@dataclass
class WindowStat:
    window_start: float
    scale_min: float
    n: int
    r_pearson: float
    r_detrended: float
    signed_R: float
    slope: float
    p_raw: float
    p_eff: float
    q: float
    rho_x1: float
    rho_y1: float
    n_eff: float
    n_eff_floored: bool

    def to_dict(self) -> dict:
        return asdict(self)


WINDOW_FIELDS = tuple(WindowStat.__dataclass_fields__)


def window_count(length: int, scale: int, step: int) -> int:
    if length < scale:
        return 0
    return (length - scale) // step + 1


def _segment_bounds(pairs: PairedSeries, segments: IntervalSet):
    n = len(pairs)
    for s, e in segments:
        a = max(0, int(round((s - pairs.t0) / pairs.dt)))
        b = min(n, int(round((e - pairs.t0) / pairs.dt)))
        if b > a:
            yield a, b


def window_stat(pairs: PairedSeries, a: int, wlen: int, scale_min: float,
                min_valid_frac: float = 0.8) -> WindowStat | None:
    """Statistics for pairs[a:a+wlen], or None if the window does not qualify."""
    ok = pairs.valid[a:a + wlen]
    if np.count_nonzero(ok) < min_valid_frac * wlen or np.count_nonzero(ok) < 10:
        return None
    idx = np.flatnonzero(ok).astype(float)
    x = pairs.x[a:a + wlen][ok]
    y = pairs.y[a:a + wlen][ok]
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    sr, slope = signed_r(x, y)
    dx, dy = detrend_linear(x, idx), detrend_linear(y, idx)
    r0 = pearson(x, y)
    rd = pearson(dx, dy)
    if not (math.isfinite(r0) and math.isfinite(rd)):
        return None
    rx, ry, neff = ar1_neff(dx, dy)
    n = x.size
    raw_neff = n * (1 - rx * ry) / (1 + rx * ry)
    return WindowStat(
        window_start=float(pairs.t0 + a * pairs.dt), scale_min=float(scale_min), n=int(n),
        r_pearson=r0, r_detrended=rd, signed_R=sr, slope=slope,
        p_raw=p_from_r(rd, n), p_eff=p_from_r(rd, neff), q=float("nan"),
        rho_x1=rx, rho_y1=ry, n_eff=neff, n_eff_floored=bool(raw_neff < NEFF_FLOOR))


def _sweep_scale(args):
    pairs, bounds, scale_min, step, min_valid_frac = args
    wlen = int(round(scale_min * 60.0 / pairs.dt))
    out = []
    for a, b in bounds:
        for start in range(a, b - wlen + 1, step):
            ws = window_stat(pairs, start, wlen, scale_min, min_valid_frac)
            if ws is not None:
                out.append(ws)
    if out:
        q = bh_fdr([w.p_eff for w in out])
        for w, qi in zip(out, q):
            w.q = float(qi)
    return out


def window_sweep(pairs: PairedSeries, segments: IntervalSet,
                 scales_min: Sequence[float] = DEFAULT_SCALES_MIN, step_min: float = 1.0,
                 min_valid_frac: float = 0.8, jobs: int = 1) -> list[WindowStat]:
    """Slide windows of every scale through every segment.

    Windows advance by ``step_min`` and must hold at least
    ``min_valid_frac`` valid pairs.  The significance test uses the
    detrended correlation with AR(1)-adjusted sample size; q-values are
    computed per scale.  Output is ordered by (scale, window start).
    """
    step = max(1, int(round(step_min * 60.0 / pairs.dt)))
    bounds = list(_segment_bounds(pairs, segments))
    tasks = [(pairs, bounds, float(sc), step, min_valid_frac) for sc in sorted(scales_min)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_sweep_scale, tasks))
    else:
        chunks = [_sweep_scale(t) for t in tasks]
    return [w for chunk in chunks for w in chunk]


@dataclass
class ScaleSummary:
    scale_min: float
    n_windows: int
    mean_r: float
    sd_r: float
    mean_r_detrended: float
    sd_r_detrended: float
    mean_signed_R: float
    sd_signed_R: float
    frac_significant: float

    def to_dict(self) -> dict:
        return asdict(self)


SUMMARY_FIELDS = tuple(ScaleSummary.__dataclass_fields__)


def _mean_sd(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    # shifting by x[0] leaves sd unchanged and makes it exactly 0 for constant input
    return float(x.mean()), float((x - x[0]).std(ddof=1)) if x.size > 1 else 0.0


def scale_summary(window_stats: Sequence[WindowStat], alpha: float = 0.05) -> list[ScaleSummary]:
    """Per-scale mean and sd of each correlation flavour and share of q < alpha."""
    out = []
    for sc in sorted({w.scale_min for w in window_stats}):
        ws = [w for w in window_stats if w.scale_min == sc]
        mr, sr = _mean_sd([w.r_pearson for w in ws])
        md, sd = _mean_sd([w.r_detrended for w in ws])
        ms, ss = _mean_sd([w.signed_R for w in ws])
        frac = float(np.mean([w.q < alpha for w in ws]))
        out.append(ScaleSummary(sc, len(ws), mr, sr, md, sd, ms, ss, frac))
    return out
