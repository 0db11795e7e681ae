"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test prints one `ACCEPTANCE <n> <name>: PASS` line on success; a
failed assertion leaves the line unprinted and the test red.
"""

import itertools
import json
import random
import time

import pytest

from oranlab import e2codec
from oranlab.e2codec import IndicationType, PduClass
from oranlab.errors import ConflictRejected, ImmutableEntry, NotPublished, NotValidated
from oranlab.e2sm import SlicePrbQuota
from oranlab.mlops import (
    Catalog, collect, deploy, monitor_and_retrain, prepare, train, validate,
)
from oranlab.objectives import SLICE_IDS, SlicingObjectives, priority_weights
from oranlab.nonrt import HeartbeatMonitor, PmCollector
from oranlab.runner import run_scenario
from oranlab.scenario import load_scenario
from oranlab.xapps import PolicyModel, SlicingXapp, default_descriptor

from generators import random_pdu
from stack import Stack
from test_ric import InsertReplier, Recorder, descriptor, kpm_subscribe, mobility_stack, sim_config
from test_sim import analytic_crossover_tick, one_cell_config, random_sim
import test_sim

OBJ = SlicingObjectives()
WEIGHTS = tuple(priority_weights(OBJ.priority)[s] for s in SLICE_IDS)


def ok(n: int, name: str) -> None:
    print(f"\nACCEPTANCE {n} {name}: PASS")


def oracle_split_cost(demand, capacity):
    """Independent brute force over sum <= capacity splits."""
    best_cost = None
    for split in itertools.product(*(range(capacity + 1) for _ in demand)):
        if sum(split) > capacity:
            continue
        cost = sum(w * max(0, d - g) for w, d, g in zip(WEIGHTS, demand, split))
        if best_cost is None or cost < best_cost:
            best_cost = cost
    return best_cost


def test_acceptance_1_codec_fidelity():
    start = time.perf_counter()
    rng = random.Random(0xACCE)
    for _ in range(10_000):
        pdu = random_pdu(rng)
        assert e2codec.decode(e2codec.encode(pdu)) == pdu
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"10k roundtrips took {elapsed:.1f}s"

    from test_codec import indication_listing_pdu, subscription_listing_pdu
    sub = subscription_listing_pdu()
    assert sub.procedure_code == 8
    assert sub.pdu_class == PduClass.INITIATING
    text = e2codec.render_debug(sub)
    for line in ("procedureCode: 8", "ricRequestorID: 123", "ricInstanceID: 34",
                 "RANfunctionID: 1", "ricActionID: 1", "ricActionType: report",
                 "ricSubsequentActionType: continue", "ricTimeToWait: w10ms"):
        assert line in text, line
    ind = indication_listing_pdu()
    assert ind.procedure_code == 5
    decoded = e2codec.decode(e2codec.encode(ind)).body
    assert (decoded.request_id.requestor_id, decoded.request_id.instance_id) == (123, 26)
    assert decoded.function_id == 0
    assert decoded.sequence_number == 24
    assert decoded.indication_type == IndicationType.REPORT
    itext = e2codec.render_debug(ind)
    for line in ("procedureCode: 5", "RICindicationSN: 24", "RICindicationType: report"):
        assert line in itext, line
    ok(1, "codec fidelity")


def test_acceptance_2_e2_state_machines():
    start = time.perf_counter()
    # setup procedure: node-initiated, functions land in the R-NIB
    stack = Stack(sim_config())
    assert sorted(stack.ric.rnib["du-0"].functions) == [1, 2, 3]

    # KPM cadence: 100 ms subscription over 10 s -> exactly 100 indications,
    # sequence numbers 1..100 (zero tolerance in simulated time)
    from oranlab.ransim import RanSim, TrafficSpec, UeConfig
    sim = RanSim(one_cell_config(
        [UeConfig(1, "urllc", 0, traffic=TrafficSpec("constant", rate_bytes=1000))]))
    body = test_sim.kpm_subscribe(sim, "du-0", period_ms=100)
    sim.step(10_000)
    indications = [e2codec.decode(f).body for _, f in sim.drain_outbox()]
    assert len(indications) == 100
    assert [i.sequence_number for i in indications] == list(range(1, 101))

    # insert/control: all three outcomes in dedicated sub-runs
    outcomes = {}
    for mode in ("accept", "deny", "ignore"):
        mstack = mobility_stack()
        xapp = InsertReplier(descriptor(f"mob-{mode}", caps=("MOBILITY",)), mode)
        mstack.deploy(xapp.descriptor, xapp)
        xapp.sdk.subscribe_insert("du-0")
        mstack.advance(8000)
        outcomes[mode] = (mstack.ric.counters, mstack.sim.ues[7].cell_id)
    counters, cell = outcomes["accept"]
    assert counters["insert_replied_accept"] == 1 and cell == 1
    counters, cell = outcomes["deny"]
    assert counters["insert_replied_deny"] == 1 and cell == 0
    counters, cell = outcomes["ignore"]
    assert counters["insert_timeout"] == 1 and cell == 1  # node resumed on its own
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"state-machine suite took {elapsed:.1f}s"
    ok(2, "E2 state machines")


@pytest.mark.parametrize("n", range(1, 9))
def test_acceptance_3_subscription_merging(n):
    from oranlab.ransim import TrafficSpec, UeConfig
    stack = Stack(sim_config(
        ues=[UeConfig(1, "urllc", 0, traffic=TrafficSpec("constant", rate_bytes=500))]))
    xapps = []
    for i in range(n):
        xapp = Recorder(descriptor(f"x{i}"))
        stack.deploy(xapp.descriptor, xapp)
        kpm_subscribe(stack, f"x{i}")
        xapps.append(xapp)
    assert stack.ric.counters["wire_subscription_requests"] == 1
    assert stack.ric.wire_subscription_count() == 1
    stack.advance(300)
    assert all(len(x.indications) == 3 for x in xapps)  # N-way fan-out
    for i in range(n):
        stack.ric.terminate(f"x{i}")
    assert stack.ric.counters["wire_subscription_deletes"] == 1
    if n == 8:
        ok(3, "subscription merging (N=1..8)")


def test_acceptance_4_conflict_mitigation():
    stack = Stack(sim_config())
    hi = Recorder(descriptor("hi-prio", priority=10))
    lo = Recorder(descriptor("lo-prio", priority=5))
    stack.deploy(hi.descriptor, hi)
    stack.deploy(lo.descriptor, lo)
    # same (node, cell, slice, parameter) inside one guard window
    result = stack.ric.submit_control("hi-prio", "du-0", SlicePrbQuota(0, "urllc", 5))
    assert result.status == "acknowledged"
    with pytest.raises(ConflictRejected) as exc:
        stack.ric.submit_control("lo-prio", "du-0", SlicePrbQuota(0, "urllc", 8))
    assert exc.value.holder == "hi-prio"
    assert stack.ric.counters["conflict_rejections"] == 1
    assert stack.sim.nodes["du-0"].cells[0].slices["urllc"].dedicated_prb == 5
    # disjoint targets both apply
    other = stack.ric.submit_control("lo-prio", "du-0", SlicePrbQuota(0, "embb", 20))
    assert other.status == "acknowledged"
    assert stack.sim.nodes["du-0"].cells[0].slices["embb"].dedicated_prb == 20
    ok(4, "conflict mitigation")


def test_acceptance_5_closed_loop_vs_oracle(tmp_path):
    start = time.perf_counter()
    # baseline steady-state cost vs the exhaustive-partition optimum
    report = run_scenario(load_scenario("slicing-overload"))
    demand_windows = report.per_window
    assert demand_windows
    oracle_costs = []
    for window in demand_windows:
        demand = tuple(int(round(window["demand"][s])) for s in SLICE_IDS)
        oracle_costs.append(oracle_split_cost(demand, 50))
    oracle_mean = sum(oracle_costs) / len(oracle_costs)
    assert oracle_mean > 0
    assert abs(report.mean_cost - oracle_mean) / oracle_mean <= 0.05, \
        f"baseline {report.mean_cost:.2f} vs oracle {oracle_mean:.2f}"

    # trained table matches the oracle exactly on every visited grid cell
    run_dirs = []
    for name in ("slicing-train-a", "slicing-train-b", "slicing-train-c"):
        out = tmp_path / name
        run_scenario(load_scenario(name), out_dir=str(out))
        run_dirs.append(str(out))
    dataset = prepare(collect(run_dirs))
    model = train(dataset, 50, OBJ)
    assert model.table
    for cell, split in model.table.items():
        best_cost = oracle_split_cost(cell, 50)
        got_cost = sum(w * max(0, d - g) for w, d, g in zip(WEIGHTS, cell, split))
        assert got_cost == best_cost, f"cell {cell}: {split} not optimal"
        assert sum(split) <= 50 and all(g <= d for g, d in zip(split, cell))
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"closed-loop criterion took {elapsed:.1f}s"
    ok(5, "closed-loop slicing vs oracle")


def test_acceptance_6_a1_end_to_end():
    from oranlab.ransim import TrafficSpec, UeConfig
    stack = Stack(sim_config(
        ues=[UeConfig(1, "urllc", 0, traffic=TrafficSpec("constant", rate_bytes=4000))]))
    slicing = SlicingXapp(default_descriptor("slicing-control"))
    stack.deploy(slicing.descriptor, slicing)
    stack.advance(300)
    assert slicing.objectives.urllc_max_latency_ms == 5.0
    policy = {"op": "create", "policy_id": "acc-6", "policy_type_id": 20008,
              "scope": {"slice": "urllc"},
              "statements": [{"kind": "objective", "name": "latency_proxy_ms",
                              "comparator": "<=", "value": 3}]}
    stack.ric.deliver_a1(json.dumps(policy).encode())
    # objectives change within one loop tick (here: synchronously on apply)
    assert slicing.objectives.urllc_max_latency_ms == 3.0
    feedback = [json.loads(f) for f in stack.ric.drain_a1_out()]
    assert feedback[-1] == {"policy_id": "acc-6", "enforced": True,
                            "at_ms": feedback[-1]["at_ms"]}
    stack.ric.deliver_a1(json.dumps({"op": "delete", "policy_id": "acc-6"}).encode())
    assert slicing.objectives.urllc_max_latency_ms == 5.0  # defaults restored
    feedback = [json.loads(f) for f in stack.ric.drain_a1_out()]
    assert feedback[-1]["enforced"] is False  # not-enforced transition
    ok(6, "A1 end-to-end")


def test_acceptance_7_ml_gate(tmp_path):
    catalog = Catalog(str(tmp_path / "catalog"))
    model = PolicyModel(model_id="gate-check", slice_ids=SLICE_IDS, capacity=50,
                        table={(0, 0, 0): (0, 0, 0)})
    # deploy before publish
    with pytest.raises(NotPublished):
        deploy(catalog, "gate-check")
    # publish before validate
    with pytest.raises(NotValidated):
        catalog.publish(model)
    # file-based load without a validation record
    path = tmp_path / "model.tbl"
    path.write_text(model.to_text())
    xapp = SlicingXapp(default_descriptor("slicing-control"))
    with pytest.raises(NotValidated):
        xapp.load_model(str(path))
    # failed validation leaves the model trained and unpublishable
    record = validate(model, [load_scenario("slicing-val-a")])
    if not record.passed:
        assert model.validation is None
        with pytest.raises(NotValidated):
            catalog.publish(model)
    # the full trained -> validated -> published order succeeds exactly once
    model.validation = {"pass_rate": 1.0, "scenarios": ["slicing-val-a"]}
    catalog.publish(model)
    assert catalog.is_published("gate-check")
    with pytest.raises(ImmutableEntry):
        catalog.publish(model)
    deployed_path = deploy(catalog, "gate-check", xapp)
    assert xapp.model_id == "gate-check"
    assert deployed_path.endswith("model.tbl")
    ok(7, "ML deployment gate")


def test_acceptance_8_simulator_physics():
    rng = random.Random(0x51)
    for _ in range(8):
        sim = random_sim(rng)
        for _ in range(150):
            sim.step(1)
            for node in sim.nodes.values():
                for cell in node.cells.values():
                    granted = sum(s.d_prb_granted for s in cell.slices.values())
                    assert granted <= cell.cfg.total_prb
        for node in sim.nodes.values():
            for cell in node.cells.values():
                for srt in cell.slices.values():
                    buffered = sum(sim.ues[uid].buffer for uid in srt.members)
                    assert (srt.arrived + srt.migrated_in
                            - srt.served - srt.migrated_out) == buffered

    from oranlab.ransim import RanSim
    from test_sim import two_cells_config, insert_subscribe
    path = ((100.0, 0.0, 0), (900.0, 0.0, 10_000))
    sim = RanSim(two_cells_config(path))
    insert_subscribe(sim, "du-0")
    expected = analytic_crossover_tick(path, 3.0, 10_000)
    emitted_at = None
    for t in range(1, 10_001):
        sim.step(1)
        if any(e2codec.decode(f).body.indication_type == IndicationType.INSERT
               for _, f in sim.drain_outbox()):
            emitted_at = t
            break
    assert emitted_at == expected, f"insert at {emitted_at}, analytic {expected}"
    ok(8, "simulator physics")


def test_acceptance_9_determinism(tmp_path):
    scenario = load_scenario("slicing-baseline")
    r1 = run_scenario(scenario, out_dir=str(tmp_path / "a"))
    r2 = run_scenario(scenario, out_dir=str(tmp_path / "b"))
    assert r1.state_hash == r2.state_hash
    for name in ("kpm_monitor.csv", "ric_metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()
    r3 = run_scenario(scenario, out_dir=str(tmp_path / "c"), tcp=True)
    assert r3.state_hash == r1.state_hash
    assert r3.ric_metrics == r1.ric_metrics
    assert r3.per_window == r1.per_window
    for name in ("kpm_monitor.csv", "ric_metrics.csv"):
        assert (tmp_path / "c" / name).read_bytes() == \
            (tmp_path / "a" / name).read_bytes()
    ok(9, "determinism (in-process and --tcp)")


def test_acceptance_10_o1_lite():
    mon = HeartbeatMonitor()
    mon.register("du-0", 1000)
    mon.beat("du-0", 3000)
    for t in range(3001, 7002):
        mon.evaluate(t)
    assert mon.transitions == [("du-0", "unavailable", 6001)]  # 3000 + 3*1000 + 1

    blobs = {("du-0", i): b"time_ms,node,cell,slice,metric,value\n"
             for i in range(1, 11)}
    blobs.update({("du-1", i): b"time_ms,node,cell,slice,metric,value\n"
                  for i in range(1, 11)})
    collector = PmCollector(lambda node, interval: blobs.get((node, interval)))
    for key in sorted(blobs):
        assert collector.on_file_ready(*key) is True
    assert collector.file_count() == 20
    for key in sorted(blobs):  # notification replay
        assert collector.on_file_ready(*key) is False
    assert collector.file_count() == 20
    ok(10, "O1-lite heartbeat and PM collection")
