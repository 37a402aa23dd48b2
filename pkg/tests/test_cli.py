import csv
import json
import subprocess
import sys

import pytest

from uavmob.cli import main
from uavmob.scenario import packaged_raw, parse_scenario


def short_scenario(tmp_path, duration=10.0):
    raw = packaged_raw("reference")
    raw["duration_s"] = duration
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", short_scenario(tmp_path), "--out", str(out)]) == 0
    for name in ("metrics.json", "ho_events.csv", "trace.csv", "nrt_stats.csv",
                 "measurements_uav1.csv", "cells_uav1.csv"):
        assert (out / name).exists(), name
    assert "UAV" in json.loads(capsys.readouterr().out)
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["per_ue"]) == {"uav1", "gue1", "gue2", "gue3"}


def test_run_packaged_with_mitigation(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", "pci_confusion", "--mitigations", "always_resolve_ecgi",
                 "--out", str(out)]) == 0
    failures = json.loads((out / "metrics.json").read_text())["by_kind"]["UAV"]["failures"]
    assert "FailureConfusion" not in failures


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "no-such-scenario", "--out", "x"],
    ["run", "--scenario", "collision", "--mitigations", "magic", "--out", "x"],
    ["run"],
    ["bogus"],
    ["analyze", "--out", "x"],
    ["analyze", "--trace", "t.csv", "--out", "x"],
])
def test_invalid_input_exit_2(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_invalid_scenario_file_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 1, "duration_s": 1, "topology": {}, "ues": [], "colour": "red"}))
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_failed_sweep_point_exit_3(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--scenario", short_scenario(tmp_path, 3.0), "--altitudes", "60,999",
                 "--out", str(out)])
    assert code == 3
    # the good altitude is still written
    assert (out / "alt_60" / "metrics.json").exists()
    assert not (out / "alt_999").exists()


def test_report(tmp_path):
    out = tmp_path / "rep"
    assert main(["report", "--scenario", short_scenario(tmp_path, 20.0), "--altitudes", "30,120",
                 "--workers", "2", "--out", str(out)]) == 0
    with (out / "nth_closest.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["bin"] for r in rows} == {"30", "120"}
    summary = json.loads((out / "ho_summary.json").read_text())
    assert set(summary) == {"by_kind", "uav_gue_ratio"}
    assert (out / "changes_per_min.csv").exists() and (out / "nrt_stats.csv").exists()


def test_analyze_round_trip(tmp_path):
    run_out = tmp_path / "run"
    assert main(["run", "--scenario", short_scenario(tmp_path, 20.0), "--out", str(run_out)]) == 0
    out = tmp_path / "an"
    assert main(["analyze", "--trace", str(run_out / "measurements_uav1.csv"),
                 "--cells", str(run_out / "cells_uav1.csv"), "--events", str(run_out / "ho_events.csv"),
                 "--out", str(out)]) == 0
    metrics = json.loads((run_out / "metrics.json").read_text())
    summary = json.loads((out / "ho_summary.json").read_text())
    assert summary["by_kind"]["UAV"]["handovers"] == metrics["by_kind"]["UAV"]["handovers"]
    with (out / "nth_closest.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["bin"] for r in rows} == {"120"}
    fractions = [float(r["fraction"]) for r in rows]
    assert fractions == pytest.approx(metrics["nth_closest"]["120"])


def test_analyze_bad_trace_exit_2(tmp_path, capsys):
    tr = tmp_path / "t.csv"
    tr.write_text("timestamp_s,x_m,y_m,z_m,cells\n0,0,0,30,9:-70\n")
    cells = tmp_path / "c.csv"
    cells.write_text("cell_id,x_m,y_m,z_m\n1,0,0,10\n")
    assert main(["analyze", "--trace", str(tr), "--cells", str(cells), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_plan_pci(tmp_path, capsys):
    out = tmp_path / "planned.json"
    assert main(["plan-pci", "--scenario", "collision", "--altitudes", "100", "--out", str(out)]) == 0
    assert "altitude 100 m: 1 colliding pairs before, 0 after" in capsys.readouterr().out
    planned = parse_scenario(json.loads(out.read_text()))
    pcis = [c.pci for c in planned.topology.cells]
    assert len(set(pcis)) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "uavmob", "plan-pci", "--scenario", "collision",
                           "--altitudes", "100"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout.split("\n", 1)[1])["name"] == "collision"
