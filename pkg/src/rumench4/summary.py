"""Per-animal signal summaries, diurnal profiles and a fixed-effects
three-factor ANOVA."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .baseline import PresenceMask, presence_stats
from .core import Series
from .errors import DataError, EmptySeriesError, InsufficientDataError

HOURS = 24
DAY_CAVEAT = ("day is treated as a fixed blocking factor; random-effect "
              "(REML) estimation is not performed")


def quantile(x, p: float) -> float:
    """Linear interpolation between order statistics at h = (n-1)p + 1."""
    s = np.sort(np.asarray(x, dtype=float))
    if s.size == 0:
        raise EmptySeriesError("quantile of an empty sample")
    h = (s.size - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, s.size - 1)
    return float(s[lo] + (h - lo) * (s[hi] - s[lo]))


@dataclass(frozen=True)
class QuantileSummary:
    n: int
    q25: float
    q50: float
    q75: float
    q90: float
    pct_saturation: float

    def to_dict(self) -> dict:
        return asdict(self)


def quantile_summary(scout: Series, ceiling: float = 50000.0) -> QuantileSummary:
    x = scout.values[scout.valid]
    if x.size == 0:
        raise EmptySeriesError("no valid samples to summarize")
    qs = [quantile(x, p) for p in (0.25, 0.5, 0.75, 0.9)]
    return QuantileSummary(int(x.size), *qs, pct_saturation=100.0 * np.count_nonzero(x >= ceiling) / x.size)


def _day_hour(times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    day = np.floor(times / 86400.0).astype(np.int64)
    hour = np.floor((times - day * 86400.0) / 3600.0).astype(np.int64)
    return day, np.clip(hour, 0, HOURS - 1)


def hourly_max_profile(s: Series, days: Sequence[int] | None = None) -> np.ndarray:
    """Hourly maxima averaged over days; NaN where an hour never has data.

    ``days`` optionally restricts the average to the given UTC day numbers
    (epoch seconds // 86400).
    """
    day, hour = _day_hour(s.times)
    ok = s.valid.copy()
    if days is not None:
        ok &= np.isin(day, np.asarray(days))
    out = np.full(HOURS, np.nan)
    for h in range(HOURS):
        maxima = [s.values[ok & (hour == h) & (day == d)].max()
                  for d in np.unique(day[ok & (hour == h)])]
        if maxima:
            out[h] = float(np.mean(maxima))
    return out


def hourly_auc_table(s: Series) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoidal area (ppm*s) per UTC day and hour.

    Only intervals between two consecutive valid samples contribute; each
    interval is credited to the hour in which it starts.  Returns the day
    numbers and a (days, 24) array.
    """
    v, ok = s.values, s.valid
    seg = ok[:-1] & ok[1:]
    area = np.where(seg, 0.5 * (np.nan_to_num(v[:-1]) + np.nan_to_num(v[1:])) * s.dt, 0.0)
    day, hour = _day_hour(s.times[:-1])
    days = np.unique(np.floor(s.times / 86400.0).astype(np.int64))
    table = np.zeros((days.size, HOURS))
    row = np.searchsorted(days, day)
    np.add.at(table, (row, hour), area)
    return days, table


def hourly_auc(s: Series) -> np.ndarray:
    """Hourly AUC in ppm*s, averaged over the days the series covers."""
    _, table = hourly_auc_table(s)
    return table.mean(axis=0)


def sniffer_summary(normalized: Series, presence: PresenceMask, peaks: Sequence,
                    baseline: Series, merge_gap_s: float = 30.0) -> dict:
    """Per-animal ambient-sampler characteristics."""
    if len(presence) != len(normalized) or not baseline.same_grid(normalized):
        raise DataError("inputs must share one grid")
    ps = presence_stats(presence, merge_gap_s=merge_gap_s)
    days = len(normalized) * normalized.dt / 86400.0
    absent = baseline.valid & ~presence.mask
    amb = baseline.values[absent]
    during = normalized.values[normalized.valid & presence.mask]
    nan = float("nan")
    return {
        "pct_time_in_hood": ps["pct_time"],
        "events_per_day": ps["events_per_day"],
        "ambient_mean_ppm": float(amb.mean()) if amb.size else nan,
        "ambient_sd_ppm": float(amb.std(ddof=1)) if amb.size > 1 else nan,
        "ch4_median_ppm": quantile(during, 0.5) if during.size else nan,
        "ch4_q25_ppm": quantile(during, 0.25) if during.size else nan,
        "ch4_q75_ppm": quantile(during, 0.75) if during.size else nan,
        "peaks_per_day": len(peaks) / days if days > 0 else 0.0,
    }


# --------------------------------------------------------------------------
# ANOVA


@dataclass(frozen=True)
class AnovaRow:
    source: str
    df: int
    sum_of_squares: float
    F: float
    p: float


FACTOR_NAMES = ("diet_or_animal", "sensor", "day")
TERMS = ((0,), (1,), (2,), (0, 1), (0, 2), (1, 2))


def _dummies(codes: np.ndarray, k: int) -> np.ndarray:
    """Treatment coding without the first level."""
    return (codes[:, None] == np.arange(1, k)[None, :]).astype(float)


def _rss(X: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    return float(r @ r), int(rank)


def factorial_anova(values, diet, sensor, day) -> list[AnovaRow]:
    """Sequential-SS ANOVA with main effects and all two-way interactions.

    Sources are fitted in the order diet_or_animal, sensor, day, then the
    three two-way interactions; the three-way interaction is left in the
    residual.  Every (diet, sensor, day) cell needs at least one
    observation.  The last row is the residual.
    """
    y = np.asarray(values, dtype=float)
    labels = [np.asarray(f) for f in (diet, sensor, day)]
    if any(f.shape != y.shape for f in labels):
        raise DataError("factor arrays must match the observations")
    codes, levels = [], []
    for f in labels:
        lev, c = np.unique(f, return_inverse=True)
        if lev.size < 2:
            raise InsufficientDataError("each factor needs at least two levels")
        codes.append(c)
        levels.append(lev.size)
    cells = np.zeros(levels, dtype=int)
    np.add.at(cells, tuple(codes), 1)
    if np.any(cells == 0):
        raise DataError("unbalanced design: a factor cell has no observations "
                        "(cell-mean imputation is off)")
    mains = [_dummies(c, k) for c, k in zip(codes, levels)]
    blocks = []
    for term in TERMS:
        if len(term) == 1:
            blocks.append(mains[term[0]])
        else:
            a, b = (mains[i] for i in term)
            blocks.append((a[:, :, None] * b[:, None, :]).reshape(y.size, -1))
    X = np.ones((y.size, 1))
    rss_prev, rank_prev = _rss(X, y)
    total_ss = rss_prev
    ss, dfs = [], []
    for block in blocks:
        X = np.hstack([X, block])
        rss, rank = _rss(X, y)
        ss.append(max(rss_prev - rss, 0.0))
        dfs.append(rank - rank_prev)
        rss_prev, rank_prev = rss, rank
    df_res = y.size - rank_prev
    if df_res <= 0:
        raise InsufficientDataError("no residual degrees of freedom")
    ms_res = rss_prev / df_res
    # round-off in the sums of squares is relative to the raw data magnitude
    scale = max(total_ss, np.finfo(float).eps * float(np.dot(y, y)), 1e-300)
    rows = []
    for term, s_, d in zip(TERMS, ss, dfs):
        name = " x ".join(FACTOR_NAMES[i] for i in term)
        if s_ <= 1e-12 * scale or d == 0:
            F, p = 0.0, 1.0
        elif ms_res <= 1e-14 * scale:
            F, p = float("inf"), 0.0
        else:
            F = (s_ / d) / ms_res
            p = float(stats.f.sf(F, d, df_res))
        rows.append(AnovaRow(name, int(d), float(s_), float(F), p))
    rows.append(AnovaRow("residual", int(df_res), float(rss_prev), float("nan"), float("nan")))
    return rows
