import json

import pytest

from rumench4.cli import main
from rumench4.fileio import read_csv, sha256_file

STAGES = ["simulate", "clean", "baseline", "detect", "xval", "report", "score"]
SHORT_CFG = "sim.duration_h = 8\nsim.pump_resets_per_day = 6\nxval.scales_min = 5, 10\n"


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.cfg"
    cfg.write_text(SHORT_CFG)
    codes = [main([stage, "--out", str(out), "--config", str(cfg)]) for stage in STAGES]
    return out, codes


def test_chain_succeeds(chain):
    out, codes = chain
    assert codes == [0] * len(STAGES)
    for name in ("scout.csv", "sniffer.csv", "behavior.csv", "truth.json", "scout_clean.csv",
                 "sniffer_clean.csv", "qc_report.json", "pump_resets.csv", "baseline.csv",
                 "presence.csv", "events.csv", "windows.csv", "scales.csv", "segments.csv",
                 "table2.csv", "table3.csv", "table4.csv", "anova.csv", "hourly_max.csv",
                 "hourly_auc.csv", "score.json"):
        assert (out / name).is_file(), name


def test_manifests_chain_checksums(chain):
    out, _ = chain
    clean = json.loads((out / "clean_manifest.json").read_text())
    sim = json.loads((out / "simulate_manifest.json").read_text())
    assert clean["schema"] == "rumench4.manifest/1"
    assert clean["inputs"]["scout.csv"] == sim["outputs"]["scout.csv"]
    assert clean["config"]["sim.duration_h"] == 8.0
    assert clean["outputs"]["scout_clean.csv"] == sha256_file(out / "scout_clean.csv")
    base = json.loads((out / "baseline_manifest.json").read_text())
    assert base["inputs"]["sniffer_clean.csv"] == clean["outputs"]["sniffer_clean.csv"]


def test_clean_stage_order_and_retention(chain):
    out, _ = chain
    rep = json.loads((out / "qc_report.json").read_text())
    order = [(s["source"], s["stage"]) for s in rep["stages"]]
    assert order == [("scout", "parse"), ("scout", "drift_correct"), ("scout", "strip_init"),
                     ("scout", "classify"), ("sniffer", "parse"), ("sniffer", "pump_flow_exclusions"),
                     ("sniffer", "convert"), ("sniffer", "sg_filter")]
    truth = json.loads((out / "truth.json").read_text())
    n = int((truth["end"] - truth["start"]) / truth["scout_dt"])
    implied = 1 - 180 / 10 / n
    assert rep["scout"]["retention_frac"] == pytest.approx(implied, abs=0.02)


def test_score_meets_thresholds(chain):
    out, _ = chain
    s = json.loads((out / "score.json").read_text())
    assert s["eructations"]["recall"] >= 0.95 and s["eructations"]["false_positives"] == 0
    assert s["pump_resets"]["all_recovered"]
    assert s["presence"]["recall"] >= 0.95 and s["presence"]["precision"] >= 0.9
    assert s["baseline"]["rmse_frac"] <= 0.05


def test_anova_reason_recorded(chain):
    out, _ = chain
    m = json.loads((out / "report_manifest.json").read_text())
    fields, rows = read_csv(out / "anova.csv")
    assert rows == [] and "not computed" in m["anova_note"]


def test_rerun_is_byte_identical(chain, tmp_path):
    out, _ = chain
    cfg = out / "run.cfg"
    for stage in STAGES[:3]:
        assert main([stage, "--out", str(tmp_path), "--config", str(cfg)]) == 0
    for name in ("scout.csv", "sniffer_clean.csv", "baseline.csv", "baseline_manifest.json"):
        assert sha256_file(tmp_path / name) == sha256_file(out / name)


def test_invalid_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("qc.bogus = 1\n")
    assert main(["simulate", "--out", str(tmp_path), "--config", str(cfg)]) == 2
    assert "qc.bogus" in capsys.readouterr().err


def test_bad_scales_flag(tmp_path):
    assert main(["xval", "--out", str(tmp_path), "--scales", "5,x"]) == 2


def test_xval_without_clean(tmp_path, capsys):
    assert main(["xval", "--out", str(tmp_path)]) == 4
    assert "rumench4 clean" in capsys.readouterr().err


def test_wrong_header(tmp_path, capsys):
    (tmp_path / "scout.csv").write_text("time,ch4\n1,2\n")
    (tmp_path / "sniffer.csv").write_text("timestamp,ch4_mg_m3,co2_mg_m3,flow_l_min,temp_c,pressure_mbar\n")
    assert main(["clean", "--out", str(tmp_path)]) == 3
    assert "timestamp" in capsys.readouterr().err


def test_malformed_row(tmp_path, capsys):
    (tmp_path / "scout.csv").write_text("timestamp,ch4_ppm,temp_c,status\n0,2000,39,OK\n")
    (tmp_path / "sniffer.csv").write_text(
        "timestamp,ch4_mg_m3,co2_mg_m3,flow_l_min,temp_c,pressure_mbar\n0,1,1,1.1,15,1013\n1,1,1,1.1,15,abc\n")
    assert main(["clean", "--out", str(tmp_path)]) == 3
    assert ":3" in capsys.readouterr().err


def _clean_inputs(tmp_path, hours=2):
    n = hours * 3600
    scout = ["timestamp,ch4_ppm,temp_c,status"]
    for k in range(0, n, 10):
        scout.append(f"{k},{20000 + (k // 10) % 50 * 100},39.0,OK")
    sniffer = ["timestamp,ch4_mg_m3,co2_mg_m3,flow_l_min,temp_c,pressure_mbar"]
    for k in range(n):
        sniffer.append(f"{k},200.0,800.0,1.1,15.0,1013.25")
    (tmp_path / "scout.csv").write_text("\n".join(scout) + "\n")
    (tmp_path / "sniffer.csv").write_text("\n".join(sniffer) + "\n")


def test_clean_input_has_no_exclusions(tmp_path):
    _clean_inputs(tmp_path)
    assert main(["clean", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "qc_report.json").read_text())
    assert rep["pump_resets"] == 0
    counts = rep["sniffer"]["counts"]
    assert counts["excluded_artifact"] == 0 and counts["excluded_flow"] == 0


def test_report_on_empty_event_ledger(tmp_path):
    _clean_inputs(tmp_path)
    for stage in ("clean", "baseline", "detect", "report"):
        assert main([stage, "--out", str(tmp_path)]) == 0, stage
    _, events = read_csv(tmp_path / "events.csv")
    assert events == []
    _, t4 = read_csv(tmp_path / "table4.csv")
    assert t4 == []
    _, t3 = read_csv(tmp_path / "table3.csv")
    assert float(t3[0]["peaks_per_day"]) == 0


def test_explicit_anchor_csv(tmp_path):
    _clean_inputs(tmp_path)
    anchors = tmp_path / "anchors.csv"
    anchors.write_text("logged_t,true_t\n0,0\n7200,7210\n")
    assert main(["clean", "--out", str(tmp_path), "--anchors", str(anchors)]) == 0
    rep = json.loads((tmp_path / "qc_report.json").read_text())
    assert rep["drift_anchors"] == 2
    assert main(["clean", "--out", str(tmp_path), "--anchors", str(tmp_path / "none.csv")]) == 4
