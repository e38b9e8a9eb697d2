import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_series
from rumench4.core import IntervalSet, Unit
from rumench4.errors import ConfigError, InsufficientDataError
from rumench4.qc import (QCConfig, SampleClass, ambient_zero_check, apply_exclusions,
                         classify_scout, classify_validity, detect_pump_resets,
                         retention_report, strip_initialization, weekly_drift_check)


def test_strip_init_counts():
    s = strip_initialization(make_series(np.full(100, 2000.0), dt=10), QCConfig(warmup_s=180))
    assert np.count_nonzero(~s.valid) == 18
    assert (s.flags[:18] == SampleClass.WARMUP).all()
    assert s.valid[18:].all()


def test_strip_init_zero_is_identity():
    raw = make_series(np.full(10, 2000.0), dt=10)
    assert strip_initialization(raw, QCConfig(warmup_s=0)) is raw


def test_strip_init_short_series():
    s = strip_initialization(make_series(np.full(5, 2000.0), dt=10))
    assert not s.valid.any()


def test_classify_boundaries():
    s = make_series([50000, 999, 999, 2000, np.nan], dt=10)
    drops = IntervalSet.from_pairs([(20, 30)])
    c = classify_scout(s, QCConfig(), drops)
    assert c.tolist() == [SampleClass.SATURATED, SampleClass.LOW, SampleClass.DROP_EVENT,
                          SampleClass.VALID, SampleClass.MISSING]


def test_classify_saturation_beats_drop():
    s = make_series([50000.0], dt=10)
    c = classify_scout(s, QCConfig(), IntervalSet.from_pairs([(0, 10)]))
    assert c[0] == SampleClass.SATURATED


def test_classify_keeps_upstream_warmup():
    s = strip_initialization(make_series(np.full(30, 2000.0), dt=10))
    c = classify_scout(s)
    assert (c[:18] == SampleClass.WARMUP).all() and (c[18:] == SampleClass.VALID).all()


def test_classify_requires_ppm():
    with pytest.raises(Exception):
        classify_scout(make_series([1.0], unit=Unit.MG_M3))


def test_pump_constant_flow():
    assert len(detect_pump_resets(make_series(np.full(100, 1.1)))) == 0


def test_pump_single_dip():
    f = np.full(100, 1.1)
    f[30:40] = 0.2
    ev = detect_pump_resets(make_series(f))
    assert list(ev) == [(30.0, 40.0)]


def test_pump_two_dips():
    f = np.full(100, 1.1)
    f[30:40] = 0.2
    f[45:50] = 0.1
    assert len(detect_pump_resets(make_series(f))) == 2


def test_exclusion_window():
    s = make_series(np.ones(200))
    out = apply_exclusions(s, IntervalSet.from_pairs([(100, 110)]), QCConfig(pre_exclusion_s=2, post_exclusion_s=40))
    bad = np.flatnonzero(~out.valid)
    assert bad[0] == 98 and bad[-1] == 149
    assert (out.flags[bad] == SampleClass.EXCLUDED_ARTIFACT).all()


def test_exclusion_identity_when_clean():
    s = make_series(np.ones(50))
    out = apply_exclusions(s, IntervalSet.empty(), QCConfig(), make_series(np.full(50, 1.1)))
    assert out.valid.all()


def test_exclusion_overlapping_windows_merge():
    s = make_series(np.ones(300))
    ev = IntervalSet.from_pairs([(100, 110), (130, 140)])
    out = apply_exclusions(s, ev)
    bad = np.flatnonzero(~out.valid)
    assert np.array_equal(bad, np.arange(98, 180))


def test_exclusion_low_flow_flagged():
    s = make_series(np.ones(20))
    flow = np.full(20, 1.1)
    flow[5] = 0.5
    out = apply_exclusions(s, IntervalSet.empty(), QCConfig(), make_series(flow))
    assert out.flags[5] == SampleClass.EXCLUDED_FLOW and not out.valid[5]


@given(st.lists(st.tuples(st.integers(0, 250), st.integers(1, 20)), max_size=6))
def test_exclusion_matches_interval_union(pairs):
    s = make_series(np.ones(300))
    ev = IntervalSet.from_pairs((a, a + d) for a, d in pairs)
    out = apply_exclusions(s, ev)
    brute = np.zeros(300, bool)
    t = np.arange(300)
    for a, d in pairs:
        brute |= (t >= a - 2) & (t < a + d + 40)
    assert np.array_equal(~out.valid, brute)


def test_ambient_zero_check():
    assert ambient_zero_check(make_series(np.full(10, 1.9)))[0]
    assert not ambient_zero_check(make_series(np.full(10, 5.0)))[0]
    ok, med = ambient_zero_check(make_series(np.full(10, 1.8)))
    assert ok and med == 1.8


def test_weekly_drift():
    day = 86400.0
    assert weekly_drift_check([(0, 2.0), (7 * day, 2.0)]) == (True, 0.0)
    ok, frac = weekly_drift_check([(0, 1.9), (7 * day, 2.1)])
    assert not ok and frac == pytest.approx(0.10)
    assert weekly_drift_check([(0, 2.0), (3 * day, 2.0)])[0]


def test_weekly_drift_needs_span():
    with pytest.raises(InsufficientDataError):
        weekly_drift_check([(0, 2.0), (3600, 2.0)])


def test_retention_all_valid():
    assert retention_report(np.zeros(10, int)).retention_frac == 1.0


def test_retention_arithmetic():
    c = ([SampleClass.VALID] * 60 + [SampleClass.SATURATED] * 20 + [SampleClass.DROP_EVENT] * 2
         + [SampleClass.LOW] * 18)
    r = retention_report(np.array(c))
    assert r.retention_frac == pytest.approx(0.82)
    assert sum(r.counts.values()) == r.total == 100
    assert r.saturation_frac == pytest.approx(0.2)


def test_retention_all_missing():
    r = retention_report(np.full(5, SampleClass.MISSING))
    assert r.retention_frac is None and not r.retention_defined


def test_classify_validity():
    c = classify_validity(make_series([1.0, np.nan]))
    assert c.tolist() == [SampleClass.VALID, SampleClass.MISSING]


def test_config_validation():
    with pytest.raises(ConfigError):
        QCConfig(low_ppm=60000)
    with pytest.raises(ConfigError):
        QCConfig(warmup_s=-1)
