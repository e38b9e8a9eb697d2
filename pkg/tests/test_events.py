import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import peak_prominences as scipy_prominences

from conftest import make_series
from rumench4.core import BehaviorInterval, BehaviorLabel
from rumench4.errors import ConfigError, InsufficientDataError
from rumench4.events import (EventConfig, detect_eructations, detect_peaks, feeding_lag,
                             local_maxima, peak_prominences, posture_response)


def scout(values, t0=0.0):
    return make_series(values, dt=10.0, t0=t0)


def test_single_drop():
    x = [50000] * 5 + [40000, 30000, 20000] + [20000] * 5
    ev = detect_eructations(scout(x))
    assert len(ev) == 1
    e = ev[0]
    assert e.magnitude_ppm == 30000
    assert e.start == 40 and e.end == 80  # end is exclusive
    assert e.source == "scout"


def test_small_drop_ignored():
    x = [20000] * 5 + [18000, 17000, 16000] + [16000] * 5
    assert detect_eructations(scout(x)) == []


def test_slow_decline_ignored():
    x = np.linspace(30000, 20000, 30)  # 10000 over 290 s, never 5000 within 60 s
    assert detect_eructations(scout(x)) == []


def test_twenty_injected_drops():
    rng = np.random.default_rng(11)
    x, truth = [], []
    level = 10000.0
    for k in range(20):
        n = int(rng.integers(40, 90))
        rise = np.linspace(level, level + rng.uniform(12000, 25000), n)
        x.extend(rise)
        top = rise[-1]
        span = int(rng.integers(1, 4))
        drop = np.linspace(top, top - rng.uniform(8000, 15000), span + 1)[1:]
        truth.append(len(x) - 1)
        x.extend(drop)
        level = drop[-1]
    x = np.round(np.array(x) / 100) * 100
    ev = detect_eructations(scout(x))
    hits = sum(any(e.start <= 10 * i < e.end for e in ev) for i in truth)
    assert hits >= 19
    assert len(ev) == hits


def brute_prominence(x, p):
    i = p
    left = x[p]
    while i > 0 and x[i - 1] <= x[p]:
        i -= 1
        left = min(left, x[i])
    j = p
    right = x[p]
    while j < len(x) - 1 and x[j + 1] <= x[p]:
        j += 1
        right = min(right, x[j])
    return x[p] - max(left, right)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 20), min_size=3, max_size=60))
def test_prominence_matches_bruteforce(vals):
    x = np.array(vals, float)
    pk = local_maxima(x)
    prom, _, _ = peak_prominences(x, pk)
    assert prom.tolist() == [brute_prominence(x, p) for p in pk]
    if pk.size:
        assert np.allclose(prom, scipy_prominences(x, pk)[0])


def test_flat_no_peaks():
    assert detect_peaks(make_series(np.zeros(500))) == []


def test_triangle_peak():
    x = np.zeros(300)
    x[100:141] = 200 - np.abs(np.arange(-20, 21)) * 10
    ev = detect_peaks(make_series(x))
    assert len(ev) == 1
    assert ev[0].magnitude_ppm == 200
    assert ev[0].peak_t == 120
    assert ev[0].source == "sniffer"


def test_separation_keeps_higher():
    x = np.zeros(300)
    x[100:111] = 100 - np.abs(np.arange(-5, 6)) * 20
    x[130:141] = 150 - np.abs(np.arange(-5, 6)) * 30
    ev = detect_peaks(make_series(x))
    assert len(ev) == 1 and ev[0].peak_t == 135


def test_peaks_below_prominence_dropped():
    x = np.zeros(100)
    x[50] = 40
    assert detect_peaks(make_series(x)) == []


def _posture_trace(pre, step, n=2000, ts=(5000.0, 12000.0)):
    x = np.full(n, float(pre))
    for t in ts:
        k = int(t / 10)
        x[k + 5:k + 40] = min(pre + step, 50000)
    behavior = [BehaviorInterval(t, t + 3000, BehaviorLabel.SITTING) for t in ts]
    return scout(x), behavior


def test_posture_step_recovered():
    s, beh = _posture_trace(20000, 14500)
    r = posture_response(s, beh)
    assert r.n == 2 and r.n_censored == 0
    assert r.mean_ppm == pytest.approx(14500)
    assert r.latency_mean_s == pytest.approx(50)


def test_posture_no_transitions():
    s, _ = _posture_trace(20000, 14500)
    r = posture_response(s, [])
    assert r.n == 0 and np.isnan(r.mean_ppm)


def test_posture_censored_at_ceiling():
    s, beh = _posture_trace(40000, 14500, ts=(5000.0,))
    r = posture_response(s, beh)
    assert r.transitions[0].censored
    assert r.transitions[0].response_ppm == pytest.approx(10000)
    assert np.isnan(r.mean_ppm)


def test_posture_ignores_other_labels():
    s, beh = _posture_trace(20000, 14500)
    beh = [BehaviorInterval(b.start, b.end, BehaviorLabel.FEEDING) for b in beh]
    assert posture_response(s, beh).n == 0


def _feeding_trace(lag, starts):
    t = np.arange(0, 48 * 3600, 10.0)
    rate = np.full(t.size, 1.0)
    for f in starts:
        rate += 4.0 * np.exp(-0.5 * ((t - f - lag) / 300.0) ** 2)
    x = np.empty(t.size)
    level = 5000.0
    for k, r in enumerate(rate):
        level += r * 10
        if level > 40000:
            level = 10000.0
        x[k] = level
    return scout(np.round(x / 100) * 100)


def test_feeding_lag_recovered():
    starts = np.arange(2 * 3600, 44 * 3600, 6 * 3600)
    r = feeding_lag(_feeding_trace(1800, starts), starts)
    assert abs(r.lag_s - 1800) <= 120
    assert not r.inconclusive and r.confidence > r.chance_level


def test_feeding_lag_needs_events():
    with pytest.raises(InsufficientDataError):
        feeding_lag(scout(np.full(5000, 20000.0)), [3600.0])


def test_feeding_flat_is_inconclusive():
    r = feeding_lag(scout(np.full(20000, 20000.0)), [3600.0, 30000.0, 60000.0])
    assert r.inconclusive
    assert r.confidence == pytest.approx(r.chance_level)


def test_event_config_validation():
    with pytest.raises(ConfigError):
        EventConfig(drop_min_ppm=0)
    with pytest.raises(ConfigError):
        EventConfig(feeding_lag_band_s=(100, 50))
