"""In-memory pipeline stages shared by the command-line tool and tests.

Each stage takes the previous stage's objects and returns a small result
record; nothing here touches the filesystem.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baseline import PresenceMask, ambient_baseline, detect_presence, normalize
from .config import RunConfig
from .core import (SCOUT_DT, SNIFFER_DT, BehaviorInterval, BehaviorLabel, DriftAnchor,
                   IntervalSet, Series, Unit, correct_clock_drift, parse_scout_csv,
                   parse_sniffer_csv, to_series)
from .errors import InsufficientDataError
from .events import (EmissionEvent, FeedingLagResult, PostureResult, detect_eructations,
                     detect_peaks, events_to_intervals, feeding_lag, posture_response)
from .filters import savitzky_golay
from .qc import (RETAINED, QCReport, apply_exclusions, classify_scout, classify_validity,
                 detect_pump_resets, retention_report, strip_initialization)
from .units import M_CH4, M_CO2, mg_m3_to_ppm
from .xval import (PairedSeries, ScaleSummary, WindowStat, align_pair, gate_events,
                   scale_summary, window_sweep)

log = logging.getLogger(__name__)


@dataclass
class CleanResult:
    scout: Series
    scout_report: QCReport
    ch4: Series
    co2: Series
    flow: Series
    pump_resets: IntervalSet
    sniffer_report: QCReport
    stage_counts: list[dict] = field(default_factory=list)
    parse_counts: dict = field(default_factory=dict)


def _valid_count(*series: Series) -> int:
    return int(sum(np.count_nonzero(s.valid) for s in series))


def clean_scout(text, anchors: Sequence[DriftAnchor] | None, cfg: RunConfig,
                name: str = "scout.csv", counts: Counter | None = None,
                stages: list | None = None) -> tuple[Series, QCReport]:
    stages = [] if stages is None else stages
    counts = Counter() if counts is None else counts
    recs = parse_scout_csv(text, name=name, counts=counts)
    if not recs:
        raise InsufficientDataError(f"{name} has no data rows")
    stages.append({"stage": "parse", "source": "scout", "records": len(recs)})
    if anchors:
        recs = correct_clock_drift(recs, anchors)
    stages.append({"stage": "drift_correct", "source": "scout", "records": len(recs),
                   "anchors": len(anchors or ())})
    s = to_series(recs, "ch4_ppm", dt=SCOUT_DT, counts=counts)
    before = _valid_count(s)
    s = strip_initialization(s, cfg.qc)
    stages.append({"stage": "strip_init", "source": "scout", "valid_before": before,
                   "valid_after": _valid_count(s)})
    drops = events_to_intervals(detect_eructations(s, cfg.event))
    classes = classify_scout(s, cfg.qc, drops)
    keep = np.isin(classes, [int(c) for c in RETAINED])
    out = s.replace(flags=classes).with_valid(keep)
    stages.append({"stage": "classify", "source": "scout", "valid_before": _valid_count(s),
                   "valid_after": _valid_count(out)})
    return out, retention_report(classes, cfg.qc)


def clean_sniffer(text, cfg: RunConfig, name: str = "sniffer.csv", counts: Counter | None = None,
                  stages: list | None = None):
    """Returns (CH4 ppm, CO2 ppm, flow, pump-reset intervals, QC report)."""
    stages = [] if stages is None else stages
    counts = Counter() if counts is None else counts
    recs = parse_sniffer_csv(text, name=name, counts=counts)
    if not recs:
        raise InsufficientDataError(f"{name} has no data rows")
    stages.append({"stage": "parse", "source": "sniffer", "records": len(recs)})
    grid = dict(dt=SNIFFER_DT, t0=recs[0].t)
    ch4 = to_series(recs, "ch4_mg_m3", counts=counts, **grid)
    grid["n"] = len(ch4)
    co2 = to_series(recs, "co2_mg_m3", **grid)
    flow = to_series(recs, "flow_l_min", **grid)
    temp = to_series(recs, "temp_c", **grid)
    pres = to_series(recs, "pressure_mbar", **grid)

    before = _valid_count(ch4, co2)
    resets = detect_pump_resets(flow, cfg.qc)
    ch4 = apply_exclusions(ch4, resets, cfg.qc, flow)
    co2 = apply_exclusions(co2, resets, cfg.qc, flow)
    stages.append({"stage": "pump_flow_exclusions", "source": "sniffer", "valid_before": before,
                   "valid_after": _valid_count(ch4, co2), "pump_resets": len(resets)})

    before = _valid_count(ch4, co2)
    tp = temp.valid & pres.valid
    counts["missing_tp"] += int(np.count_nonzero((ch4.valid | co2.valid) & ~tp))

    def convert(s: Series, molar_mass: float) -> Series:
        ok = s.valid & tp
        v = np.full(len(s), np.nan)
        v[ok] = mg_m3_to_ppm(s.values[ok], temp.values[ok], pres.values[ok], molar_mass)
        return s.replace(values=v, valid=ok, unit=Unit.PPM)

    ch4, co2 = convert(ch4, M_CH4), convert(co2, M_CO2)
    stages.append({"stage": "convert", "source": "sniffer", "valid_before": before,
                   "valid_after": _valid_count(ch4, co2)})

    before = _valid_count(ch4, co2)
    w, order = cfg.filt.sg_window, cfg.filt.sg_order
    ch4, co2 = savitzky_golay(ch4, w, order), savitzky_golay(co2, w, order)
    stages.append({"stage": "sg_filter", "source": "sniffer", "valid_before": before,
                   "valid_after": _valid_count(ch4, co2)})
    report = retention_report(classify_validity(ch4), cfg.qc)
    return ch4, co2, flow, resets, report


def clean(scout_text, sniffer_text, anchors: Sequence[DriftAnchor] | None,
          cfg: RunConfig = RunConfig()) -> CleanResult:
    stages: list = []
    counts: Counter = Counter()
    scout, scout_report = clean_scout(scout_text, anchors, cfg, counts=counts, stages=stages)
    ch4, co2, flow, resets, sn_report = clean_sniffer(sniffer_text, cfg, counts=counts, stages=stages)
    for st in stages:
        log.info("clean %s", st)
    return CleanResult(scout, scout_report, ch4, co2, flow, resets, sn_report, stages, dict(counts))


@dataclass
class BaselineResult:
    presence: PresenceMask
    baseline: Series
    normalized: Series


def baseline_stage(ch4: Series, co2: Series, cfg: RunConfig = RunConfig()) -> BaselineResult:
    presence = detect_presence(co2, cfg.base)
    base = ambient_baseline(ch4, presence, cfg.base)
    return BaselineResult(presence, base, normalize(ch4, base))


@dataclass
class DetectResult:
    eructations: list[EmissionEvent]
    peaks: list[EmissionEvent]
    posture: PostureResult | None
    feeding: FeedingLagResult | None
    notes: list[str] = field(default_factory=list)


def detect_stage(scout: Series, normalized: Series, behavior: Sequence[BehaviorInterval] | None,
                 cfg: RunConfig = RunConfig()) -> DetectResult:
    eructations = detect_eructations(scout, cfg.event)
    peaks = detect_peaks(normalized, cfg.event)
    notes = []
    posture = feeding = None
    if behavior is None:
        notes.append("no behavior log: posture and feeding analyses skipped")
    else:
        posture = posture_response(scout, behavior, cfg.event)
        starts = [b.start for b in behavior if b.label == BehaviorLabel.FEEDING]
        try:
            feeding = feeding_lag(scout, starts, cfg.event)
        except InsufficientDataError as exc:
            notes.append(f"feeding lag skipped: {exc}")
    return DetectResult(eructations, peaks, posture, feeding, notes)


@dataclass
class XvalResult:
    pairs: PairedSeries
    segments: IntervalSet
    windows: list[WindowStat]
    summaries: list[ScaleSummary]


def xval_stage(scout: Series, normalized: Series, presence: PresenceMask,
               eructations: Sequence[EmissionEvent], cfg: RunConfig = RunConfig(),
               jobs: int = 1) -> XvalResult:
    x = cfg.xval
    pairs = align_pair(scout, normalized, x.min_bin_frac)
    segments = gate_events(pairs, presence, eructations, x.min_segment_s)
    windows = window_sweep(pairs, segments, x.scales_min, x.step_min, x.min_valid_frac, jobs)
    return XvalResult(pairs, segments, windows, scale_summary(windows, x.alpha))
