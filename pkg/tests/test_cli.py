import argparse

import pandas as pd
import pytest
import yaml

import hamanet
from utils.scenario_loader import parse_scenario_text

NON_GATEWAY_START = """\
name: strict-check
catalog: builtin
topology:
  nodes: [N1, N2]
  edges: [N1-N2]
steps:
  - {at: 0, op: start_service, node: N1, culture: NameCulture}
"""


def test_seed_ranges():
    assert hamanet.parse_seed_range("4") == [4]
    assert hamanet.parse_seed_range("1..3") == [1, 2, 3]
    with pytest.raises(argparse.ArgumentTypeError):
        hamanet.parse_seed_range("5..2")


def test_run_writes_report_and_trace(scenario_path, tmp_path):
    report_path = tmp_path / "out" / "report.yaml"
    trace_path = tmp_path / "trace.txt"
    code = hamanet.main(
        ["run", scenario_path("table4"), "--seed", "7", "--out", str(report_path), "--trace", str(trace_path)]
    )
    assert code == hamanet.EXIT_OK
    report = yaml.safe_load(report_path.read_text())
    assert report["scenario"] == "table4"
    assert report["seed"] == 7
    assert report["conservation"] is True
    assert report["metrics"]["total_tx"] == 31
    assert report["control_tx"] == {"MCJOIN": 4, "MCSTART": 4, "TABLE": 3}
    assert report["dropped"] == {}
    assert report["society"] == ["C1 File service"]
    assert report["tables"][0] == {"owner": "N1", "cid": "C1", "rows": ["N2 C1 N1-N2", "N3 C1 N1-N3", "N4 C1 N1-N2-N4"]}
    trace = trace_path.read_text()
    assert trace.endswith("\n")
    assert trace.splitlines()[0].startswith("t=0 node=N1 ev=START ")


def test_run_prints_report_without_out(scenario_path, capsys):
    assert hamanet.main(["run", scenario_path("table4"), "--mode", "baseline"]) == hamanet.EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["mode"] == "baseline"
    assert report["control_tx"] == {}


def test_same_seed_gives_identical_files(scenario_path, tmp_path):
    outputs = []
    for name in ("a", "b"):
        report, trace = tmp_path / f"{name}.yaml", tmp_path / f"{name}.txt"
        hamanet.main(["run", scenario_path("fig4"), "--seed", "3", "--out", str(report), "--trace", str(trace)])
        outputs.append((report.read_bytes(), trace.read_bytes()))
    assert outputs[0] == outputs[1]


def test_invalid_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("topology:\n  nodes: [N1, N1]\n")
    assert hamanet.main(["run", str(bad)]) == hamanet.EXIT_INVALID
    assert "topology.nodes[1].label" in capsys.readouterr().err


def test_malformed_send_payload_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(
        NON_GATEWAY_START.replace("NameCulture", "CultureF")
        + "  - {at: 20, op: send, src: N1, dst: N2, cid: C1, op_code: FILE_CHUNK, payload_bytes: big}\n"
    )
    assert hamanet.main(["run", str(bad)]) == hamanet.EXIT_INVALID
    assert "steps[1].payload_bytes" in capsys.readouterr().err


def test_empty_scenario_exits_2(tmp_path):
    empty = tmp_path / "empty.scn"
    empty.write_text("")
    assert hamanet.main(["validate", str(empty)]) == hamanet.EXIT_INVALID


def test_missing_file_exits_1(tmp_path):
    assert hamanet.main(["run", str(tmp_path / "absent.scn")]) == hamanet.EXIT_IO


def test_strict_mode_fails_on_step_failure(tmp_path):
    path = tmp_path / "strict.scn"
    path.write_text(NON_GATEWAY_START)
    assert hamanet.main(["run", str(path), "--out", str(tmp_path / "r.yaml")]) == hamanet.EXIT_OK
    assert hamanet.main(["run", str(path), "--strict", "--out", str(tmp_path / "r.yaml")]) == hamanet.EXIT_STRICT
    report = yaml.safe_load((tmp_path / "r.yaml").read_text())
    assert "PrerequisiteUnmet" in report["step_failures"][0]


def test_validate_emits_canonical_form(load, scenario_path, capsys):
    assert hamanet.main(["validate", scenario_path("fig4"), "--emit"]) == hamanet.EXIT_OK
    assert parse_scenario_text(capsys.readouterr().out) == load("fig4")


def test_validate_summary(scenario_path, capsys):
    assert hamanet.main(["validate", scenario_path("table4")]) == hamanet.EXIT_OK
    assert capsys.readouterr().out.startswith("ok: table4 (4 nodes, 3 edges")


def test_compare_report(scenario_path, tmp_path):
    out = tmp_path / "compare.yaml"
    code = hamanet.main(["compare", scenario_path("table4"), "--seed", "2", "--messages", "10", "--out", str(out)])
    assert code == hamanet.EXIT_OK
    report = yaml.safe_load(out.read_text())
    assert report["hamanet_total_tx"] == 31
    assert report["baseline_total_tx"] == 40
    assert report["hamanet_wins"] is True
    assert report["crossover"] == 6
    assert report["scan"][-1] == {"k": 6, "hamanet": 23, "baseline": 24}


def test_compare_without_scan_is_unreached(scenario_path, capsys):
    assert hamanet.main(["compare", scenario_path("table4")]) == hamanet.EXIT_OK
    assert yaml.safe_load(capsys.readouterr().out)["crossover"] == "unreached"


def test_sweep_writes_one_row_per_seed(scenario_path, tmp_path, monkeypatch):
    monkeypatch.setenv("HAMANET_WORKERS", "1")
    out = tmp_path / "sweep.csv"
    code = hamanet.main(["sweep", scenario_path("table4"), "--seeds", "1..3", "--out", str(out)])
    assert code == hamanet.EXIT_OK
    df = pd.read_csv(out)
    assert list(df["seed"]) == [1, 2, 3]
    assert list(df["total_tx"]) == [31, 31, 31]
    assert list(df["delivered"]) == [10, 10, 10]
    assert df.columns[0] == "seed"
