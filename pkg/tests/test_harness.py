"""Scenario loading, the in-process runner, captures, and reports."""

import json
from pathlib import Path

import pytest

from oranlab.errors import MalformedCapture, ScenarioInvalid
from oranlab.runner import inspect_capture, read_capture, run_scenario
from oranlab.scenario import bundled_scenarios, load_scenario, parse_scenario


class TestScenarioParsing:
    def test_bundled_list(self):
        names = bundled_scenarios()
        assert "slicing-baseline" in names
        assert "slicing-overload" in names

    def test_load_by_bare_name(self):
        scenario = load_scenario("slicing-baseline")
        assert scenario.name == "slicing-baseline"
        assert scenario.duration_ms == 10_000

    def test_missing_file(self):
        with pytest.raises(ScenarioInvalid):
            load_scenario("/nope/missing.yaml")

    def test_bad_yaml(self):
        with pytest.raises(ScenarioInvalid):
            parse_scenario("{unbalanced")

    def test_unknown_slice_reference(self):
        text = """
name: broken
duration_ms: 5000
nodes:
  - node_id: du-0
    cells:
      - cell_id: 0
        global_id: 1
        total_prb: 10
        slices: [{slice_id: urllc, kind: urllc}]
ues:
  - {ue_id: 1, slice: gaming, cell: 0, traffic: {kind: constant, rate_bytes: 1}}
"""
        with pytest.raises(ScenarioInvalid) as exc:
            parse_scenario(text)
        assert "slice" in str(exc.value)

    def test_duration_must_exceed_warmup(self):
        text = """
name: tiny
duration_ms: 500
warmup_ms: 1000
nodes:
  - node_id: du-0
    cells:
      - {cell_id: 0, global_id: 1, total_prb: 10,
         slices: [{slice_id: urllc, kind: urllc}]}
"""
        with pytest.raises(ScenarioInvalid):
            parse_scenario(text)

    def test_overcommitted_slices(self):
        text = """
name: over
duration_ms: 5000
nodes:
  - node_id: du-0
    cells:
      - cell_id: 0
        global_id: 1
        total_prb: 10
        slices:
          - {slice_id: urllc, kind: urllc, dedicated_prb: 6}
          - {slice_id: embb, kind: embb, dedicated_prb: 6}
"""
        with pytest.raises(ScenarioInvalid):
            parse_scenario(text)

    def test_unpublished_model_rejected_at_run(self, tmp_path):
        scenario = load_scenario("slicing-baseline")
        bad = type(scenario)(**{**scenario.__dict__,
                                "model_id": "ghost",
                                "catalog_dir": str(tmp_path)})
        with pytest.raises(ScenarioInvalid):
            run_scenario(bad)


class TestRunner:
    def test_baseline_smoke(self, tmp_path):
        report = run_scenario(load_scenario("slicing-baseline"),
                              out_dir=str(tmp_path))
        assert report.consistent
        assert report.windows == 90  # (10000 - 1000 warmup) / 100 ms
        assert report.violation_rate == 0.0
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "kpm_monitor.csv").exists()
        assert (tmp_path / "ric_metrics.csv").exists()
        saved = json.loads((tmp_path / "report.json").read_text())
        assert saved["state_hash"] == report.state_hash

    def test_policy_feedback_recorded(self):
        report = run_scenario(load_scenario("slicing-baseline"))
        flags = [(f["policy_id"], f["enforced"]) for f in report.policy_feedback]
        assert ("lat-urllc-1", True) in flags
        assert ("lat-urllc-1", False) in flags

    def test_same_seed_same_hash_and_bytes(self, tmp_path):
        scenario = load_scenario("slicing-baseline")
        r1 = run_scenario(scenario, out_dir=str(tmp_path / "one"))
        r2 = run_scenario(scenario, out_dir=str(tmp_path / "two"))
        assert r1.state_hash == r2.state_hash
        csv1 = (tmp_path / "one" / "kpm_monitor.csv").read_bytes()
        csv2 = (tmp_path / "two" / "kpm_monitor.csv").read_bytes()
        assert csv1 == csv2
        m1 = (tmp_path / "one" / "ric_metrics.csv").read_bytes()
        m2 = (tmp_path / "two" / "ric_metrics.csv").read_bytes()
        assert m1 == m2

    def test_seed_override_changes_hash(self):
        scenario = load_scenario("slicing-baseline")
        r1 = run_scenario(scenario)
        r2 = run_scenario(scenario, seed=999)
        assert r1.state_hash != r2.state_hash

    def test_mobility_scenario_hands_over(self):
        report = run_scenario(load_scenario("mobility-insert"))
        assert report.sim_counters["du-0"]["handover_count"] == 1

    def test_heartbeats_in_report(self):
        report = run_scenario(load_scenario("slicing-baseline"))
        assert report.heartbeat_transitions == []  # beats never stop


class TestCapture:
    def test_capture_contains_setup_and_subscription(self, tmp_path):
        cap = tmp_path / "wire.cap"
        run_scenario(load_scenario("slicing-baseline"), capture_path=str(cap))
        text = inspect_capture(str(cap))
        assert "procedureCode: 1" in text   # setup
        assert "procedureCode: 8" in text   # subscription
        assert "procedureCode: 5" in text   # indications
        assert "ricRequestorID:" in text
        assert "nonrt->ric" in text
        assert "ric->nonrt" in text

    def test_capture_roundtrip_record_count(self, tmp_path):
        cap = tmp_path / "wire.cap"
        report = run_scenario(load_scenario("slicing-overload"),
                              capture_path=str(cap))
        records = read_capture(str(cap))
        e2_in = sum(1 for r in records if r[1] == 0)
        wire_in = sum(report.ric_metrics["wire_in"].values())
        assert e2_in == wire_in

    def test_empty_capture(self, tmp_path):
        from oranlab.runner import CaptureWriter
        cap = tmp_path / "empty.cap"
        CaptureWriter(str(cap)).close()
        assert inspect_capture(str(cap)) == ""

    def test_truncated_capture(self, tmp_path):
        cap = tmp_path / "wire.cap"
        run_scenario(load_scenario("mobility-insert"), capture_path=str(cap))
        data = cap.read_bytes()
        (tmp_path / "cut.cap").write_bytes(data[:len(data) - 3])
        with pytest.raises(MalformedCapture) as exc:
            inspect_capture(str(tmp_path / "cut.cap"))
        assert "byte" in str(exc.value)

    def test_not_a_capture(self, tmp_path):
        bad = tmp_path / "bad.cap"
        bad.write_bytes(b"hello world")
        with pytest.raises(MalformedCapture):
            read_capture(str(bad))


class TestOverloadScenario:
    def test_steady_state_matches_priority_fill(self):
        report = run_scenario(load_scenario("slicing-overload"))
        last = report.per_window[-1]
        assert last["demand"] == {"embb": 40.0, "mmtc": 10.0, "urllc": 20.0}
        assert last["granted"] == {"embb": 30.0, "mmtc": 0.0, "urllc": 20.0}
        # weighted shortfall: 100*0 + 10*10 + 1*10
        assert last["cost"] == pytest.approx(110.0)
