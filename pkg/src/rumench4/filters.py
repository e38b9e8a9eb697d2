"""Smoothing filters for 1 Hz sniffer signals and a harness to compare them.

Windowed filters (moving average, Savitzky-Golay) emit a value only where
the full centred window lies inside the series and every sample in it is
valid; everything else comes out invalid.  Recursive filters (exponential
smoothing, Kalman) carry their state across invalid samples but mark those
outputs invalid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .core import IntervalSet, Series
from .errors import ConfigError, InsufficientDataError, PipelineError


@dataclass(frozen=True)
class FilterConfig:
    ma_window: int = 21
    es_alpha: float = 0.3
    sg_window: int = 21
    sg_order: int = 3
    kf_process_var: float = 1.0
    kf_measurement_var: float = 1.0
    kf_dt: float | None = None  # None: use the series sampling interval

    def __post_init__(self):
        for w in (self.ma_window, self.sg_window):
            if w < 1 or w % 2 == 0:
                raise ConfigError(f"window {w} must be a positive odd integer")
        if self.sg_window < self.sg_order + 2:
            raise ConfigError("sg_window must be at least sg_order + 2")
        if not 0 < self.es_alpha <= 1:
            raise ConfigError("es_alpha must lie in (0, 1]")
        if not (self.kf_process_var > 0 and self.kf_measurement_var > 0):
            raise ConfigError("Kalman variances must be positive")


def _check_window(w: int) -> int:
    w = int(w)
    if w < 1 or w % 2 == 0:
        raise ConfigError(f"window length {w} must be a positive odd integer")
    return w


def _fir(s: Series, coeffs: np.ndarray) -> Series:
    """Centred FIR (dot-product orientation) with the strict edge policy."""
    w = coeffs.size
    h = w // 2
    n = len(s)
    out = np.full(n, np.nan)
    ok = np.zeros(n, dtype=bool)
    if n >= w:
        x = np.where(s.valid, s.values, 0.0)
        core = np.correlate(x, coeffs, mode="valid")
        bad = np.concatenate([[0], np.cumsum(~s.valid)])
        clean = (bad[w:] - bad[:-w]) == 0
        out[h:n - h] = core
        ok[h:n - h] = clean
    return s.replace(values=out, valid=ok)


def moving_average(s: Series, w: int = 21) -> Series:
    """Centred rectangular mean over ``w`` samples."""
    w = _check_window(w)
    return _fir(s, np.full(w, 1.0 / w))


def exp_smooth(s: Series, alpha: float = 0.3) -> Series:
    """First-order recursive smoother ``y[k] = a*x[k] + (1-a)*y[k-1]``.

    The recursion starts at the first valid sample with ``y = x``.
    """
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    x = s.values.tolist()
    valid = s.valid.tolist()
    out = [np.nan] * len(x)
    y = None
    b = 1.0 - alpha
    for k, (xk, vk) in enumerate(zip(x, valid)):
        if not vk:
            continue
        y = xk if y is None else alpha * xk + b * y
        out[k] = y
    return s.replace(values=np.array(out, dtype=float), valid=s.valid.copy())


@lru_cache(maxsize=64)
def _savgol_cached(w: int, order: int) -> np.ndarray:
    h = w // 2
    # offsets scaled to [-1, 1] keep the normal equations well conditioned;
    # the value at offset 0 is unaffected by the scaling
    z = np.arange(-h, h + 1, dtype=float) / max(h, 1)
    A = np.vander(z, order + 1, increasing=True)
    AtA = A.T @ A
    if np.linalg.matrix_rank(AtA) < order + 1:
        raise PipelineError(f"rank-deficient Savitzky-Golay fit (w={w}, order={order})")
    coeffs = np.linalg.solve(AtA, A.T)[0]
    coeffs.setflags(write=False)
    return coeffs


def savgol_coefficients(w: int = 21, order: int = 3) -> np.ndarray:
    """Weights giving the fitted polynomial's value at the window centre."""
    w = _check_window(w)
    if not 0 <= order < w:
        raise ConfigError("order must satisfy 0 <= order < w")
    return _savgol_cached(w, int(order))


def savitzky_golay(s: Series, w: int = 21, order: int = 3) -> Series:
    """Local least-squares polynomial smoothing."""
    return _fir(s, savgol_coefficients(w, order))


def kalman_cv(s: Series, cfg: FilterConfig = FilterConfig()) -> Series:
    """Constant-velocity Kalman filter; returns the filtered level.

    State is (level, slope) with transition ``[[1, dt], [0, 1]]``, process
    covariance ``q*I`` and a level measurement with variance ``r``.  The
    state starts at the first valid sample with zero slope and a diffuse
    covariance of 1e6*I.
    """
    dt = s.dt if cfg.kf_dt is None else cfg.kf_dt
    q, r = cfg.kf_process_var, cfg.kf_measurement_var
    x = s.values.tolist()
    valid = s.valid.tolist()
    out = [np.nan] * len(x)
    started = False
    lvl = slope = 0.0
    p00 = p01 = p11 = 0.0
    for k, (z, vk) in enumerate(zip(x, valid)):
        if not started:
            if not vk:
                continue
            lvl, slope = z, 0.0
            p00, p01, p11 = 1e6, 0.0, 1e6
            started = True
        else:
            lvl = lvl + dt * slope
            p00 = p00 + 2.0 * dt * p01 + dt * dt * p11 + q
            p01 = p01 + dt * p11
            p11 = p11 + q
        if vk:
            S = p00 + r
            k0 = p00 / S
            k1 = p01 / S
            innov = z - lvl
            lvl += k0 * innov
            slope += k1 * innov
            p11 = p11 - k1 * p01
            p01 = (1.0 - k0) * p01
            p00 = (1.0 - k0) * p00
            out[k] = lvl
    return s.replace(values=np.array(out, dtype=float), valid=s.valid.copy())


def default_filters(cfg: FilterConfig = FilterConfig()) -> dict[str, Callable[[Series], Series]]:
    return {
        "MA": lambda s: moving_average(s, cfg.ma_window),
        "ES": lambda s: exp_smooth(s, cfg.es_alpha),
        "SG": lambda s: savitzky_golay(s, cfg.sg_window, cfg.sg_order),
        "KF": lambda s: kalman_cv(s, cfg),
    }


@dataclass(frozen=True)
class FilterMetrics:
    name: str
    peak_amplitude_retention: float
    lag_samples: int
    noise_suppression: float
    score: float


# Weights of the combined score: amplitude fidelity first, then timing,
# then smoothing.
SCORE_WEIGHTS = (0.5, 0.3, 0.2)


def combined_score(retention: float, lag: int, suppression: float, half_window: int) -> float:
    fidelity = max(0.0, 1.0 - abs(1.0 - retention))
    timing = max(0.0, 1.0 - abs(lag) / max(half_window, 1))
    wa, wt, ws = SCORE_WEIGHTS
    return wa * fidelity + wt * timing + ws * suppression


def _peak_heights(x: np.ndarray, ok: np.ndarray, windows, base: float) -> np.ndarray:
    heights = []
    for a, b in windows:
        seg = x[a:b][ok[a:b]]
        heights.append(seg.max() - base if seg.size else np.nan)
    return np.array(heights)


def _xcorr_lag(f: np.ndarray, t: np.ndarray, ok: np.ndarray, max_lag: int) -> int:
    fc = np.where(ok, f - f[ok].mean(), 0.0)
    tc = np.where(ok, t - t[ok].mean(), 0.0)
    n = f.size
    best, best_lag = -np.inf, 0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            c = np.dot(fc[lag:], tc[:n - lag])
        else:
            c = np.dot(fc[:n + lag], tc[-lag:])
        if c > best + 1e-12 * abs(best) or (c == best and abs(lag) < abs(best_lag)):
            best, best_lag = c, lag
    return best_lag


def filter_compare(raw: Series, truth_peaks: IntervalSet, truth: Series | None = None,
                   filters: Mapping[str, Callable[[Series], Series]] | None = None,
                   cfg: FilterConfig = FilterConfig()) -> dict[str, FilterMetrics]:
    """Score candidate filters on a trace with known peak locations.

    peak_amplitude_retention
        mean over peaks of filtered / reference peak height, heights taken
        above each signal's median over peak-free samples.  The reference
        is ``truth`` when given, otherwise ``raw``.
    lag_samples
        shift (filtered relative to reference) maximizing their
        cross-correlation within +-window samples; positive means delay.
    noise_suppression
        ``1 - var(filtered residual) / var(raw residual)`` over peak-free
        samples, residuals taken against ``truth`` when given.
    """
    if len(truth_peaks) == 0:
        raise InsufficientDataError("filter comparison needs at least one truth peak")
    filters = default_filters(cfg) if filters is None else filters
    ref = raw if truth is None else truth
    if not ref.same_grid(raw):
        raise ValueError("truth series must share the raw grid")
    half = cfg.sg_window // 2
    times = raw.times
    peak_zone = truth_peaks.pad(half * raw.dt, half * raw.dt).to_mask(times)
    windows = []
    for a, b in truth_peaks:
        ia = max(0, int(np.ceil((a - raw.t0) / raw.dt)) - half)
        ib = min(len(raw), int(np.ceil((b - raw.t0) / raw.dt)) + half)
        windows.append((ia, ib))

    results = {}
    for name, fn in filters.items():
        f = fn(raw)
        ok = f.valid & ref.valid & raw.valid
        free = ok & ~peak_zone
        if not free.any() or not ok.any():
            raise InsufficientDataError("no peak-free samples to evaluate")
        base_f = np.median(f.values[free])
        base_t = np.median(ref.values[free])
        hf = _peak_heights(f.values, ok, windows, base_f)
        ht = _peak_heights(ref.values, ok, windows, base_t)
        good = np.isfinite(hf) & np.isfinite(ht) & (ht > 0)
        retention = float(np.mean(hf[good] / ht[good])) if good.any() else np.nan
        lag = _xcorr_lag(f.values, ref.values, ok, cfg.sg_window)
        if truth is None:
            rf, rr = f.values[free], raw.values[free]
        else:
            rf = f.values[free] - truth.values[free]
            rr = raw.values[free] - truth.values[free]
        var_raw = np.var(rr)
        suppression = float(1.0 - np.var(rf) / var_raw) if var_raw > 0 else 0.0
        results[name] = FilterMetrics(name, retention, int(lag), suppression,
                                      combined_score(retention, lag, suppression, half))
    return results


def rank_filters(metrics: Mapping[str, FilterMetrics]) -> list[str]:
    return sorted(metrics, key=lambda k: -metrics[k].score)


def metrics_csv_rows(metrics: Mapping[str, FilterMetrics]) -> list[list]:
    rows = [["filter", "retention", "lag", "suppression", "score"]]
    for name in rank_filters(metrics):
        m = metrics[name]
        rows.append([name, f"{m.peak_amplitude_retention:.6f}", m.lag_samples,
                     f"{m.noise_suppression:.6f}", f"{m.score:.6f}"])
    return rows
