import numpy as np
import pytest

from rumench4.core import IntervalSet, parse_sniffer_csv, parse_scout_csv, to_series
from rumench4.errors import AlignmentError, ConfigError, DataError
from rumench4.events import EmissionEvent
from rumench4.sim import (SimConfig, SimTruth, coupled_scenario, filter_benchmark, score_pipeline,
                          simulate, sniffer_pulse)
from rumench4.units import M_CH4, mg_m3_to_ppm

SHORT = dict(duration_h=6.0, meals_per_day=4.0, posture_per_day=4.0, pump_resets_per_day=8.0)


@pytest.fixture(scope="module")
def short_run():
    return simulate(SimConfig(seed=3, **SHORT))


def test_deterministic(short_run):
    again = simulate(SimConfig(seed=3, **SHORT))
    assert again.contents() == short_run.contents()


def test_seed_changes_output(short_run):
    assert simulate(SimConfig(seed=4, **SHORT)).scout_csv != short_run.scout_csv


def test_pulse_division():
    p = sniffer_pulse(25000, 500)
    assert p.max() == pytest.approx(50.0, rel=0.03)
    assert p.max() <= 50.0


def test_zero_eructation_rate_gives_flat_ambient():
    out = simulate(SimConfig(seed=1, duration_h=3.0, eructation_rate_factor=0.0,
                             pump_resets_per_day=0.0))
    assert out.truth.eructations == []
    recs = parse_sniffer_csv(out.sniffer_csv)
    t = np.array([r.t for r in recs])
    ppm = mg_m3_to_ppm(np.array([r.ch4_mg_m3 for r in recs]), np.array([r.temp_c for r in recs]),
                       np.array([r.pressure_mbar for r in recs]), M_CH4)
    resid = ppm - out.truth.ambient_at(t)
    assert abs(resid.mean()) < 0.5 and resid.std() < 4.0


def test_truth_inside_span(short_run):
    tr = short_run.truth
    for e in tr.eructations:
        assert tr.start <= e["t"] < tr.end
    for a, b in tr.presence + tr.pump_resets:
        assert tr.start <= a < b <= tr.end
    for p in tr.posture:
        assert tr.start <= p["t"] < tr.end


def test_truth_json_roundtrip(short_run):
    tr = short_run.truth
    again = SimTruth.from_json(tr.to_json())
    assert again.to_json() == tr.to_json()
    with pytest.raises(DataError):
        SimTruth.from_json('{"schema": "other"}')


def test_presence_fraction_close_to_programmed():
    out = simulate(SimConfig(seed=2))
    pct = out.truth.presence_set.total / (out.truth.end - out.truth.start)
    assert pct == pytest.approx(0.17, abs=0.02)


def test_scout_initialization_rows(short_run):
    recs = parse_scout_csv(short_run.scout_csv)
    assert all(r.ch4_ppm is None for r in recs[:12])
    assert recs[12].ch4_ppm is not None


def test_scout_clock_drift_matches_anchors(short_run):
    recs = parse_scout_csv(short_run.scout_csv)
    (l0, t0), (l1, t1) = short_run.truth.clock_anchors
    assert recs[0].t == pytest.approx(l0)
    rate = (l1 - l0) / (t1 - t0)
    assert recs[-1].t - recs[0].t == pytest.approx((t1 - 10 - t0) * rate, abs=2e-3)


def test_pump_resets_drop_flow(short_run):
    recs = parse_sniffer_csv(short_run.sniffer_csv)
    flow = to_series(recs, "flow_l_min")
    low = IntervalSet.from_mask(flow.times, flow.values < 0.75, 1.0)
    assert list(low) == [tuple(r) for r in short_run.truth.pump_resets]


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(dilution_min=0.5)
    with pytest.raises(ConfigError):
        SimConfig(duration_h=96, clock_drift_s_per_day=45)
    with pytest.raises(ConfigError):
        SimConfig(vent_frac_max=1.0)


def test_infeasible_schedule():
    with pytest.raises(ConfigError):
        simulate(SimConfig(duration_h=2.0, presence_frac=0.9))


def test_coupled_scenario_is_valid_config():
    cfg = coupled_scenario(7, duration_h=12.0)
    assert cfg.seed == 7 and cfg.episode_timescale_s > 0
    assert abs(cfg.clock_drift_s_per_day) * 4 <= 120


def test_filter_benchmark_shapes():
    noisy, truth, peaks = filter_benchmark(SimConfig(seed=0), duration_s=3600, n_puffs=10)
    assert noisy.same_grid(truth) and len(peaks) == 10
    assert np.std(noisy.values - truth.values) == pytest.approx(3.0, rel=0.1)


def _events(pairs):
    return [EmissionEvent("eructation_drop", a, b, 9000, "scout") for a, b in pairs]


def _scored_truth(short_run):
    tr = short_run.truth
    first = tr.start + tr.programmed["warmup_nan_s"] + 180 + tr.scout_dt
    return tr, [e["t"] for e in tr.eructations if first <= e["t"] <= tr.end - tr.scout_dt]


def test_score_perfect(short_run):
    tr, ts = _scored_truth(short_run)
    rep = score_pipeline(tr, eructations=_events((t - 5, t + 5) for t in ts),
                         pump_resets=tr.reset_set)
    assert rep["eructations"]["recall"] == 1 and rep["eructations"]["precision"] == 1
    assert rep["pump_resets"]["all_recovered"] and rep["pump_resets"]["false_events"] == 0


def test_score_one_missed_of_ten(short_run):
    tr, ts = _scored_truth(short_run)
    tr.eructations = [{"t": t, "magnitude_ppm": 9000.0, "in_presence": False} for t in ts[:10]]
    rep = score_pipeline(tr, eructations=_events((t - 5, t + 5) for t in ts[:9]))
    assert rep["eructations"]["recall"] == pytest.approx(0.9)
    assert rep["eructations"]["false_positives"] == 0


def test_score_false_positive(short_run):
    tr, ts = _scored_truth(short_run)
    gap = next((a + b) / 2 for a, b in zip(ts, ts[1:]) if b - a > 200)
    rep = score_pipeline(tr, eructations=_events([(t - 5, t + 5) for t in ts] + [(gap, gap + 10)]))
    assert rep["eructations"]["false_positives"] == 1


def test_score_out_of_span(short_run):
    tr = short_run.truth
    with pytest.raises(AlignmentError):
        score_pipeline(tr, eructations=_events([(tr.end + 3600, tr.end + 3610)]))


def test_score_scalar_errors(short_run):
    rep = score_pipeline(short_run.truth, posture_mean_ppm=14790.0, feeding_lag_s=1700.0)
    assert rep["posture"]["rel_error"] == pytest.approx(0.02)
    assert rep["feeding"]["abs_error_s"] == 100
