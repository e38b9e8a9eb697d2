from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rumench4.core import (BehaviorLabel, DriftAnchor, IntervalSet, ScoutRecord, Series, Unit,
                           correct_clock_drift, drift_map, format_timestamp, parse_anchor_csv,
                           parse_behavior_csv, parse_scout_csv, parse_sniffer_csv,
                           parse_timestamp, runs, to_series)
from rumench4.errors import AnchorError, DataError, RowError, SchemaError

SCOUT_HEADER = "timestamp,ch4_ppm,temp_c,status\n"
SNIFFER_HEADER = "timestamp,ch4_mg_m3,co2_mg_m3,flow_l_min,temp_c,pressure_mbar\n"


def test_scout_row_maps_fields():
    recs = parse_scout_csv(SCOUT_HEADER + "2024-09-12T08:00:00Z,2500,39.1,OK\n")
    assert len(recs) == 1
    r = recs[0]
    assert r.ch4_ppm == 2500
    assert r.temp_c == pytest.approx(39.1)
    assert r.status == "OK"
    assert r.t == parse_timestamp("2024-09-12T08:00:00+00:00")


def test_scout_nan_is_missing_but_kept():
    counts = Counter()
    recs = parse_scout_csv(SCOUT_HEADER + "2024-09-12T08:00:00Z,NaN,39.1,INIT\n", counts=counts)
    assert recs[0].ch4_ppm is None
    assert counts["missing_ch4"] == 1


def test_scout_out_of_range_is_missing():
    recs = parse_scout_csv(SCOUT_HEADER + "0,60000,39,OK\n10,-5,39,OK\n")
    assert [r.ch4_ppm for r in recs] == [None, None]


def test_scout_preserves_order_and_count():
    text = SCOUT_HEADER + "".join(f"{t},{1000 + t},39,OK\n" for t in (0, 10, 20))
    recs = parse_scout_csv(text)
    assert [r.t for r in recs] == [0, 10, 20]


def test_scout_missing_column_is_schema_error():
    with pytest.raises(SchemaError) as exc:
        parse_scout_csv("time,ch4_ppm,temp_c,status\n0,1,2,OK\n", name="a.csv")
    assert "timestamp" in str(exc.value) and "a.csv" in str(exc.value)


def test_sniffer_flow_field():
    recs = parse_sniffer_csv(SNIFFER_HEADER + "0,1.5,900,1.1,15,1013\n")
    assert recs[0].flow_l_min == pytest.approx(1.1)


def test_sniffer_empty_body():
    assert parse_sniffer_csv(SNIFFER_HEADER) == []


def test_sniffer_bad_pressure_reports_line():
    text = SNIFFER_HEADER + "0,1.5,900,1.1,15,1013\n1,1.5,900,1.1,15,abc\n"
    with pytest.raises(RowError) as exc:
        parse_sniffer_csv(text, name="s.csv")
    assert exc.value.line == 3
    assert "s.csv:3" in str(exc.value)


def test_sniffer_pressure_outside_band_is_missing():
    recs = parse_sniffer_csv(SNIFFER_HEADER + "0,1.5,900,1.1,15,700\n")
    assert recs[0].pressure_mbar is None


def test_sniffer_negative_flow_rejected():
    with pytest.raises(RowError):
        parse_sniffer_csv(SNIFFER_HEADER + "0,1.5,900,-0.1,15,1013\n")


def test_behavior_clock_interval():
    recs = parse_behavior_csv("start,end,label\n08:10,08:25,head_in_hood\n", session_date="2024-09-12")
    assert len(recs) == 1
    assert recs[0].duration == 900
    assert recs[0].label == BehaviorLabel.HEAD_IN_HOOD


def test_behavior_overlaps_retained():
    text = "start,end,label\n08:10,08:25,head_in_hood\n08:15,08:40,sitting\n"
    recs = parse_behavior_csv(text, session_date="2024-09-12")
    assert {r.label for r in recs} == {BehaviorLabel.HEAD_IN_HOOD, BehaviorLabel.SITTING}


def test_behavior_unknown_label():
    counts = Counter()
    recs = parse_behavior_csv("start,end,label\n08:10,08:25,grooming\n",
                              session_date="2024-09-12", counts=counts)
    assert recs[0].label == BehaviorLabel.OTHER
    assert counts["unknown_labels"] == 1


def test_behavior_clock_needs_session():
    with pytest.raises(RowError):
        parse_behavior_csv("start,end,label\n08:10,08:25,sitting\n")


def test_behavior_reversed_interval():
    with pytest.raises(RowError):
        parse_behavior_csv("start,end,label\n100,50,sitting\n")


def test_timestamp_roundtrip():
    t = 1726099200.125
    assert parse_timestamp(format_timestamp(t)) == pytest.approx(t, abs=1e-6)


def test_drift_hand_interpolation():
    anchors = [DriftAnchor(0, 0), DriftAnchor(86400, 86445)]
    recs = correct_clock_drift([ScoutRecord(43200.0, 1.0, None, "OK")], anchors)
    assert recs[0].t == pytest.approx(43222.5)


def test_drift_identity():
    anchors = [DriftAnchor(0, 0), DriftAnchor(86400, 86400)]
    recs = [ScoutRecord(float(t), 1.0, None, "OK") for t in range(0, 86400, 3600)]
    out = correct_clock_drift(recs, anchors)
    assert [r.t for r in out] == [r.t for r in recs]


def test_drift_negative_bounded():
    anchors = [DriftAnchor(0, 0), DriftAnchor(86400, 86370)]
    recs = [ScoutRecord(float(t), 1.0, None, "OK") for t in range(0, 86401, 600)]
    out = correct_clock_drift(recs, anchors)
    corr = np.array([o.t - r.t for o, r in zip(out, recs)])
    assert corr.min() >= -30 - 1e-9 and corr.max() <= 0


def test_drift_needs_two_anchors():
    with pytest.raises(AnchorError):
        drift_map([DriftAnchor(0, 0)])


def test_drift_anchor_bound():
    with pytest.raises(AnchorError):
        drift_map([DriftAnchor(0, 0), DriftAnchor(100, 300)])


def test_drift_anchor_order():
    with pytest.raises(AnchorError):
        drift_map([DriftAnchor(100, 100), DriftAnchor(0, 0)])


def test_anchor_csv():
    anchors = parse_anchor_csv("logged_t,true_t\n0,0\n86400,86445\n")
    assert anchors[1].offset == 45


@given(off0=st.floats(-100, 100), off1=st.floats(-100, 100), t=st.floats(0, 86400))
def test_drift_map_stays_between_anchor_offsets(off0, off1, t):
    m = drift_map([DriftAnchor(0, off0), DriftAnchor(86400, 86400 + off1)])
    c = float(m(t)) - t
    assert min(off0, off1) - 1e-6 <= c <= max(off0, off1) + 1e-6


def _recs(times):
    return [ScoutRecord(float(t), 1000.0 + t, None, "OK") for t in times]


def test_to_series_exact_cadence():
    s = to_series(_recs(range(0, 100, 10)), "ch4_ppm", dt=10)
    assert len(s) == 10 and s.valid.all()
    assert s.unit == Unit.PPM


def test_to_series_gap():
    times = [0, 10, 20, 50, 60]
    s = to_series(_recs(times), "ch4_ppm", dt=10)
    assert len(s) == 7
    assert np.count_nonzero(~s.valid) == 2


def test_to_series_duplicate_later_wins():
    recs = _recs([0, 10]) + [ScoutRecord(10.0, 7.0, None, "OK")]
    counts = Counter()
    s = to_series(recs, "ch4_ppm", dt=10, counts=counts)
    assert s.values[1] == 7.0
    assert counts["duplicates"] == 1


def test_to_series_unsorted():
    with pytest.raises(DataError):
        to_series(_recs([10, 0]), "ch4_ppm", dt=10)


def test_series_invalid_samples_are_nan():
    s = Series(0, 1, [1.0, 2.0, np.inf], [True, False, True])
    assert s.valid.tolist() == [True, False, False]
    assert np.isnan(s.values[1:]).all()
    with pytest.raises(ValueError):
        s.values[0] = 5


def test_series_rejects_bad_dt():
    with pytest.raises(ValueError):
        Series(0, 0, [1.0], [True])


def test_interval_merge_and_contains():
    iv = IntervalSet.from_pairs([(5, 10), (0, 3), (9, 12), (12, 14)])
    assert list(iv) == [(0, 3), (5, 14)]
    assert iv.contains([0, 3, 5, 13.9, 14]).tolist() == [True, False, True, True, False]
    assert iv.total == 12


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 200), st.integers(1, 30)), max_size=12))
def test_interval_mask_matches_bruteforce(pairs):
    iv = IntervalSet.from_pairs((a, a + d) for a, d in pairs)
    t = np.arange(0, 240, 0.5)
    brute = np.zeros(t.size, bool)
    for a, d in pairs:
        brute |= (t >= a) & (t < a + d)
    assert np.array_equal(iv.contains(t), brute)
    assert np.all(iv.starts[1:] > iv.ends[:-1])


@given(st.lists(st.booleans(), max_size=50))
def test_runs_reconstruct_mask(mask):
    s, e = runs(mask)
    rebuilt = np.zeros(len(mask), bool)
    for a, b in zip(s, e):
        rebuilt[a:b] = True
    assert rebuilt.tolist() == list(mask)
