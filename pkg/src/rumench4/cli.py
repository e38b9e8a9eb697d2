"""Command-line pipeline: simulate, clean, baseline, detect, xval, report, score.

Every subcommand works inside one output directory (``--out``), reading
the files earlier stages left there and writing its own CSV outputs plus
a JSON manifest citing input checksums and the full configuration.

Exit codes: 0 ok, 1 unexpected failure, 2 configuration error,
3 input schema error, 4 missing upstream output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import PresenceMask, presence_stats
from .config import RunConfig, load_config
from .core import (BehaviorInterval, DriftAnchor, IntervalSet, Series, Unit, format_timestamp,
                   parse_anchor_csv, parse_behavior_csv)
from .errors import ConfigError, DataError, PipelineError, RowError, SchemaError
from .events import EmissionEvent
from .fileio import csv_text, json_text, read_csv, sha256_file, sha256_text, atomic_write_text
from .pipeline import baseline_stage, clean, detect_stage, xval_stage
from .qc import SampleClass, classify_validity
from .sim import SimTruth, score_pipeline, simulate
from .summary import (DAY_CAVEAT, factorial_anova, hourly_auc, hourly_max_profile,
                      quantile_summary, sniffer_summary)
from .xval import SUMMARY_FIELDS, WINDOW_FIELDS

log = logging.getLogger("rumench4")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SCHEMA, EXIT_MISSING = 0, 1, 2, 3, 4
MANIFEST_SCHEMA = "rumench4.manifest/1"
CSV_SCHEMA = "rumench4.csv/1"


class MissingUpstream(PipelineError):
    def __init__(self, path: Path, stage: str):
        super().__init__(f"missing {path}; run `rumench4 {stage}` first")


# --------------------------------------------------------------------------
# Artifact helpers


class Run:
    """Bookkeeping for one subcommand: inputs, outputs and manifest."""

    def __init__(self, stage: str, out: Path, cfg: RunConfig, config_text: str | None):
        self.stage, self.out, self.cfg = stage, out, cfg
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.extra: dict = {}
        self.config_text = config_text

    def need(self, name: str, stage: str, path: str | None = None) -> Path:
        p = Path(path) if path else self.out / name
        if not p.is_file():
            raise MissingUpstream(p, stage)
        self.inputs[p.name] = sha256_file(p)
        return p

    def write(self, name: str, text: str) -> None:
        atomic_write_text(self.out / name, text)
        self.outputs[name] = sha256_text(text)

    def finish(self) -> None:
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "stage": self.stage,
            "version": __version__,
            "config": self.cfg.to_dict(),
            "config_file_sha256": sha256_text(self.config_text) if self.config_text else None,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            **self.extra,
        }
        atomic_write_text(self.out / f"{self.stage}_manifest.json", json_text(manifest))


def _series_rows(t: np.ndarray, *cols):
    return zip((f"{x:.3f}" for x in t), *cols)


def _read_grid(rows: list[dict], col: str = "t_s") -> tuple[float, float, int]:
    if not rows:
        raise DataError("stage output has no rows")
    t = np.array([float(r[col]) for r in rows])
    dt = float(np.round(np.median(np.diff(t)), 6)) if t.size > 1 else 1.0
    return float(t[0]), dt, t.size


def _column(rows, name) -> np.ndarray:
    return np.array([float(r[name]) if r[name] != "" else np.nan for r in rows])


def _flag_column(rows, name) -> np.ndarray:
    return np.array([r[name] == "1" for r in rows])


def _class_column(rows, name) -> np.ndarray:
    lookup = {c.label: int(c) for c in SampleClass}
    return np.array([lookup[r[name]] for r in rows], dtype=np.int8)


def write_scout_clean(run: Run, s: Series) -> None:
    labels = [SampleClass(int(c)).label for c in s.flags]
    run.write("scout_clean.csv", csv_text(
        ["t_s", "ch4_ppm", "valid", "class"],
        _series_rows(s.times, s.values, s.valid, labels), nd=3))


def read_scout_clean(path: Path) -> Series:
    _, rows = read_csv(path)
    t0, dt, _ = _read_grid(rows)
    return Series(t0, dt, _column(rows, "ch4_ppm"), _flag_column(rows, "valid"), Unit.PPM,
                  flags=_class_column(rows, "class"))


def write_sniffer_clean(run: Run, ch4: Series, co2: Series, flow: Series) -> None:
    run.write("sniffer_clean.csv", csv_text(
        ["t_s", "ch4_ppm", "co2_ppm", "flow_l_min", "ch4_valid", "co2_valid", "class"],
        _series_rows(ch4.times, ch4.values, co2.values, flow.values, ch4.valid, co2.valid,
                     [SampleClass(int(c)).label for c in classify_validity(ch4)]),
        nd=4))


def read_sniffer_clean(path: Path) -> tuple[Series, Series]:
    _, rows = read_csv(path)
    t0, dt, _ = _read_grid(rows)
    ch4 = Series(t0, dt, _column(rows, "ch4_ppm"), _flag_column(rows, "ch4_valid"), Unit.PPM)
    co2 = Series(t0, dt, _column(rows, "co2_ppm"), _flag_column(rows, "co2_valid"), Unit.PPM)
    return ch4, co2


def read_baseline(path: Path) -> tuple[Series, Series, PresenceMask]:
    _, rows = read_csv(path)
    t0, dt, _ = _read_grid(rows)
    valid = _flag_column(rows, "valid")
    base = Series(t0, dt, _column(rows, "baseline_ppm"), np.ones(len(rows), bool), Unit.PPM)
    norm = Series(t0, dt, _column(rows, "normalized_ppm"), valid, Unit.PPM)
    return base, norm, PresenceMask(t0, dt, _flag_column(rows, "presence"))


EVENT_FIELDS = ["kind", "start_s", "end_s", "magnitude_ppm", "source", "peak_s"]


def event_rows(events):
    for e in events:
        yield [e.kind, f"{e.start:.3f}", f"{e.end:.3f}", e.magnitude_ppm, e.source,
               "" if e.peak_t is None else f"{e.peak_t:.3f}"]


def read_events(path: Path) -> list[EmissionEvent]:
    _, rows = read_csv(path)
    return [EmissionEvent(r["kind"], float(r["start_s"]), float(r["end_s"]),
                          float(r["magnitude_ppm"]), r["source"],
                          float(r["peak_s"]) if r["peak_s"] else None) for r in rows]


def interval_rows(iv: IntervalSet):
    for a, b in iv:
        yield [f"{a:.3f}", f"{b:.3f}", f"{b - a:.3f}", format_timestamp(a), format_timestamp(b)]


INTERVAL_FIELDS = ["start_s", "end_s", "duration_s", "start_utc", "end_utc"]


def read_intervals(path: Path) -> IntervalSet:
    _, rows = read_csv(path)
    return IntervalSet.from_pairs((float(r["start_s"]), float(r["end_s"])) for r in rows)


def load_anchors(path: Path) -> list[DriftAnchor]:
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            pairs = json.loads(text)["clock_anchors"]
        except (KeyError, ValueError) as exc:
            raise SchemaError("clock_anchors", str(path)) from exc
        return [DriftAnchor(float(a), float(b)) for a, b in pairs]
    return parse_anchor_csv(text, name=str(path))


# --------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args, cfg: RunConfig, run: Run) -> None:
    sim = cfg.sim if args.seed is None else cfg.with_overrides(sim={"seed": args.seed}).sim
    run.cfg = cfg.with_overrides(sim={"seed": sim.seed})
    out = simulate(sim)
    for name, text in out.contents().items():
        run.write(name, text)
    run.extra["truth_schema"] = "rumench4.simtruth/1"


def cmd_clean(args, cfg: RunConfig, run: Run) -> None:
    scout_p = run.need("scout.csv", "simulate", args.scout)
    sniffer_p = run.need("sniffer.csv", "simulate", args.sniffer)
    anchors = None
    anchor_p = Path(args.anchors) if args.anchors else run.out / "truth.json"
    if args.anchors or anchor_p.is_file():
        anchor_p = run.need(anchor_p.name, "simulate", str(anchor_p))
        anchors = load_anchors(anchor_p)
    res = clean(scout_p.read_text(encoding="utf-8"), sniffer_p.read_text(encoding="utf-8"),
                anchors, cfg)
    write_scout_clean(run, res.scout)
    write_sniffer_clean(run, res.ch4, res.co2, res.flow)
    run.write("pump_resets.csv", csv_text(INTERVAL_FIELDS, interval_rows(res.pump_resets)))
    report = {
        "schema": "rumench4.qc/1",
        "scout": res.scout_report.to_dict(),
        "sniffer": res.sniffer_report.to_dict(),
        "pump_resets": len(res.pump_resets),
        "stages": res.stage_counts,
        "parse_counts": res.parse_counts,
        "drift_anchors": 0 if anchors is None else len(anchors),
    }
    run.write("qc_report.json", json_text(report))
    run.extra["stage_counts"] = res.stage_counts


def cmd_baseline(args, cfg: RunConfig, run: Run) -> None:
    ch4, co2 = read_sniffer_clean(run.need("sniffer_clean.csv", "clean"))
    res = baseline_stage(ch4, co2, cfg)
    run.write("baseline.csv", csv_text(
        ["t_s", "ch4_ppm", "baseline_ppm", "normalized_ppm", "presence", "valid"],
        _series_rows(ch4.times, ch4.values, res.baseline.values, res.normalized.values,
                     res.presence.mask, res.normalized.valid), nd=4))
    run.write("presence.csv", csv_text(INTERVAL_FIELDS, interval_rows(res.presence.intervals)))
    run.extra["presence"] = presence_stats(res.presence, merge_gap_s=cfg.base.merge_gap_s)
    run.extra["warnings"] = list(res.presence.warnings)
    run.extra["low_confidence_days"] = res.baseline.meta.get("low_confidence_days", [])


def _behavior(args, run: Run) -> list[BehaviorInterval] | None:
    p = Path(args.behavior) if args.behavior else run.out / "behavior.csv"
    if not p.is_file():
        if args.behavior:
            raise MissingUpstream(p, "simulate")
        return None
    run.need(p.name, "simulate", str(p))
    return parse_behavior_csv(p.read_text(encoding="utf-8"), name=str(p))


def cmd_detect(args, cfg: RunConfig, run: Run) -> None:
    scout = read_scout_clean(run.need("scout_clean.csv", "clean"))
    _, norm, _ = read_baseline(run.need("baseline.csv", "baseline"))
    res = detect_stage(scout, norm, _behavior(args, run), cfg)
    run.write("events.csv", csv_text(EVENT_FIELDS, event_rows(res.eructations + res.peaks)))
    summary = {
        "schema": "rumench4.detect/1",
        "eructations": len(res.eructations),
        "sniffer_peaks": len(res.peaks),
        "posture": None if res.posture is None else res.posture.to_dict(),
        "feeding": None if res.feeding is None else res.feeding.to_dict(),
        "notes": res.notes,
    }
    run.write("detect.json", json_text(summary))


def cmd_xval(args, cfg: RunConfig, run: Run) -> None:
    scout = read_scout_clean(run.need("scout_clean.csv", "clean"))
    _, norm, presence = read_baseline(run.need("baseline.csv", "baseline"))
    events = read_events(run.need("events.csv", "detect"))
    erucs = [e for e in events if e.source == "scout"]
    res = xval_stage(scout, norm, presence, erucs, cfg, jobs=args.jobs)
    run.write("segments.csv", csv_text(INTERVAL_FIELDS, interval_rows(res.segments)))
    run.write("windows.csv", csv_text(
        WINDOW_FIELDS, ([getattr(w, f) for f in WINDOW_FIELDS] for w in res.windows)))
    run.write("scales.csv", csv_text(
        SUMMARY_FIELDS, ([getattr(s, f) for f in SUMMARY_FIELDS] for s in res.summaries)))
    run.extra["segments"] = len(res.segments)
    run.extra["pairs_valid"] = res.pairs.n_valid


def cmd_report(args, cfg: RunConfig, run: Run) -> None:
    scout = read_scout_clean(run.need("scout_clean.csv", "clean"))
    base, norm, presence = read_baseline(run.need("baseline.csv", "baseline"))
    events = read_events(run.need("events.csv", "detect"))
    peaks = [e for e in events if e.source == "sniffer"]
    notes = []
    t2_fields = ["animal", "n", "q25_ppm", "q50_ppm", "q75_ppm", "q90_ppm", "pct_saturation"]
    rows2 = []
    if scout.valid.any():
        q = quantile_summary(scout, cfg.qc.saturation_ppm)
        rows2.append([args.animal, q.n, q.q25, q.q50, q.q75, q.q90, q.pct_saturation])
    else:
        notes.append("no valid in-rumen samples: table2 left empty")
    run.write("table2.csv", csv_text(t2_fields, rows2))

    t3 = sniffer_summary(norm, presence, peaks, base, cfg.base.merge_gap_s)
    t3_fields = ["animal"] + list(t3)
    run.write("table3.csv", csv_text(t3_fields, [[args.animal] + list(t3.values())]))

    # ANOVA on hourly maxima: animal, sensor and UTC day as factors
    obs, diet, sensor, day = [], [], [], []
    for name, s in (("scout", scout), ("sniffer", norm)):
        d_idx = np.floor(s.times / 86400.0).astype(np.int64)
        h_idx = np.floor((s.times % 86400.0) / 3600.0).astype(np.int64)
        for d in np.unique(d_idx):
            for h in range(24):
                sel = (d_idx == d) & (h_idx == h) & s.valid
                if sel.any():
                    obs.append(float(s.values[sel].max()))
                    diet.append(args.animal)
                    sensor.append(name)
                    day.append(int(d))
    anova_fields = ["source", "df", "sum_of_squares", "F", "p"]
    try:
        rows = factorial_anova(obs, diet, sensor, day)
        run.write("anova.csv", csv_text(anova_fields, ([r.source, r.df, r.sum_of_squares, r.F, r.p]
                                                       for r in rows)))
        run.extra["anova_note"] = DAY_CAVEAT
    except DataError as exc:
        run.write("anova.csv", csv_text(anova_fields, []))
        run.extra["anova_note"] = f"not computed: {exc}"

    hm_s = hourly_max_profile(scout) if scout.valid.any() else np.full(24, np.nan)
    hm_n = hourly_max_profile(norm) if norm.valid.any() else np.full(24, np.nan)
    run.write("hourly_max.csv", csv_text(["hour", "scout_max_ppm", "sniffer_max_ppm"],
                                         ([h, hm_s[h], hm_n[h]] for h in range(24))))
    auc_s, auc_n = hourly_auc(scout), hourly_auc(norm)
    run.write("hourly_auc.csv", csv_text(["hour", "scout_auc_ppm_s", "sniffer_auc_ppm_s"],
                                         ([h, auc_s[h], auc_n[h]] for h in range(24))))
    # table4.csv mirrors scales.csv when the xval stage has run
    scales_p = run.out / "scales.csv"
    if scales_p.is_file():
        run.need("scales.csv", "xval")
        fields, rows4 = read_csv(scales_p)
        run.write("table4.csv", csv_text(list(fields), ([r[f] for f in fields] for r in rows4)))
    else:
        run.write("table4.csv", csv_text(list(SUMMARY_FIELDS), []))
        notes.append("no xval output: table4 left empty")
    run.extra["notes"] = notes


def cmd_score(args, cfg: RunConfig, run: Run) -> None:
    truth = SimTruth.from_json(run.need("truth.json", "simulate", args.truth).read_text(encoding="utf-8"))
    _, co2 = read_sniffer_clean(run.need("sniffer_clean.csv", "clean"))
    resets = read_intervals(run.need("pump_resets.csv", "clean"))
    base, _, presence = read_baseline(run.need("baseline.csv", "baseline"))
    events = read_events(run.need("events.csv", "detect"))
    detect = json.loads(run.need("detect.json", "detect").read_text(encoding="utf-8"))

    class _Mask:
        times, mask, valid = presence.times, presence.mask, co2.valid

    posture = (detect.get("posture") or {}).get("mean_ppm")
    feeding = (detect.get("feeding") or {}).get("lag_s")
    report = score_pipeline(truth, eructations=[e for e in events if e.source == "scout"],
                            pump_resets=resets, presence=_Mask, baseline=base,
                            posture_mean_ppm=posture, feeding_lag_s=feeding)
    run.write("score.json", json_text(report))


COMMANDS = {
    "simulate": cmd_simulate, "clean": cmd_clean, "baseline": cmd_baseline,
    "detect": cmd_detect, "xval": cmd_xval, "report": cmd_report, "score": cmd_score,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rumench4", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="working directory for stage files")
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic deployment")
    s.add_argument("--seed", type=int)
    s = sub.add_parser("clean", parents=[common], help="parse, correct and quality-control raw logs")
    s.add_argument("--scout", help="in-rumen CSV (default OUT/scout.csv)")
    s.add_argument("--sniffer", help="ambient sampler CSV (default OUT/sniffer.csv)")
    s.add_argument("--anchors", help="drift anchors: CSV logged_t,true_t or JSON with clock_anchors")
    sub.add_parser("baseline", parents=[common], help="presence mask and ambient baseline")
    s = sub.add_parser("detect", parents=[common], help="eructations, peaks, posture and feeding")
    s.add_argument("--behavior", help="behavior log CSV (default OUT/behavior.csv if present)")
    s = sub.add_parser("xval", parents=[common], help="scale-dependent correlation sweep")
    s.add_argument("--scales", help="comma-separated window scales in minutes")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (one scale each)")
    s = sub.add_parser("report", parents=[common], help="summary tables and hourly profiles")
    s.add_argument("--animal", default="animal-1", help="label for the animal/diet factor")
    s = sub.add_parser("score", parents=[common], help="score pipeline outputs against truth")
    s.add_argument("--truth", help="truth JSON (default OUT/truth.json)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if getattr(args, "scales", None):
            try:
                scales = tuple(float(x) for x in args.scales.split(",") if x.strip())
            except ValueError:
                raise ConfigError(f"bad --scales value: {args.scales!r}") from None
            cfg = cfg.with_overrides(xval={"scales_min": scales})
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be at least 1")
        config_text = Path(args.config).read_text(encoding="utf-8") if args.config else None
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, out, cfg, config_text)
        COMMANDS[args.command](args, cfg, run)
        run.finish()
    except ConfigError as exc:
        print(f"rumench4: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, RowError) as exc:
        print(f"rumench4: input error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except MissingUpstream as exc:
        print(f"rumench4: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except PipelineError as exc:
        print(f"rumench4: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
