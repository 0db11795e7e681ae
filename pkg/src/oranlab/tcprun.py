"""Multi-process mode: the near-RT RIC runs in a child process and every
E2/A1 byte crosses a real TCP socket through the framed transport.

The parent keeps the clock, the sim, and the non-RT RIC, and drives the
child with a lockstep sync protocol that reproduces the in-process event
order exactly, so reports and CSV artifacts are identical across modes:

    parent                             child (RIC)
    ------                             -----------
    write n_i E2 frames per node
    write m A1 frames
    sync {advance t, counts}  ------>  set clock, drain counted frames,
                                       run timers (controls come back as
    service control requests  <----->  synchronous request/response)
    sync {done, k}            <------  write k A1 feedback frames
    read k feedback frames

Child-initiated requests only happen while the parent is inside its
servicing loop, and the child blocks on one connection at a time, so the
exchange is deterministic.
"""

from __future__ import annotations

import json
import selectors
import subprocess
import sys
from pathlib import Path
from typing import Optional

from .errors import ScenarioInvalid
from .nonrt import NonRtConfig, NonRtRic
from .ransim import RanSim
from .ric import NearRtRic, RicConfig, metrics_csv
from .runner import CaptureWriter, ObjectiveEvaluator, RunReport
from .scenario import Scenario
from .transport import CLOSED, TcpConnection, tcp_connect, tcp_listen
from .xapps import BUNDLED_XAPPS, default_descriptor


def _send_json(conn: TcpConnection, obj: dict) -> None:
    conn.send(json.dumps(obj, sort_keys=True).encode("utf-8"))


def _recv_json(conn: TcpConnection) -> dict:
    frame = conn.recv()
    if frame is CLOSED:
        raise ScenarioInvalid("peer closed the sync channel")
    return json.loads(frame.decode("utf-8"))


class TcpLink:
    """Node link backed by one TCP connection."""

    def __init__(self, conn: TcpConnection):
        self.conn = conn

    def send(self, frame: bytes) -> None:
        self.conn.send(frame)

    def request(self, frame: bytes) -> bytes:
        self.conn.send(frame)
        resp = self.conn.recv()
        if resp is CLOSED:
            raise ScenarioInvalid("node connection closed mid-request")
        return resp


# --- child process -----------------------------------------------------------------


def child_main() -> int:
    listener = tcp_listen("127.0.0.1", 0)
    print(f"PORT {listener.address[1]}", flush=True)
    sync: Optional[TcpConnection] = None
    e2: dict[str, TcpConnection] = {}
    a1: Optional[TcpConnection] = None
    init: Optional[dict] = None
    # accept until the sync channel has announced the init config and every
    # expected connection has identified itself
    while True:
        conn = listener.accept()
        hello = _recv_json(conn)
        role = hello.get("role")
        if role == "sync":
            sync = conn
            init = _recv_json(sync)
        elif role == "e2":
            e2[hello["node"]] = conn
        elif role == "a1":
            a1 = conn
        if init is not None and a1 is not None and \
                set(e2) == set(init["nodes"]):
            break
    listener.close()

    ric = NearRtRic(RicConfig())
    for node_id in init["nodes"]:
        ric.attach_link(node_id, TcpLink(e2[node_id]))
    _send_json(sync, {"done": "ready"})

    while True:
        cmd = _recv_json(sync)
        name = cmd["cmd"]
        if name == "setup":
            for node_id, count in cmd["e2"].items():
                for _ in range(count):
                    ric.deliver_e2(node_id, e2[node_id].recv())
            _send_json(sync, {"done": "setup"})
        elif name == "deploy":
            for spec in cmd["xapps"]:
                descriptor = default_descriptor(spec["kind"], **spec["overrides"])
                instance = BUNDLED_XAPPS[spec["kind"]](descriptor)
                ric.onboard(descriptor)
                ric.deploy(descriptor.name, instance=instance)
            _send_json(sync, {"done": "deploy"})
        elif name == "advance":
            t = cmd["t"]
            ric.now_ms = t
            for node_id, count in cmd["e2"].items():
                for _ in range(count):
                    ric.deliver_e2(node_id, e2[node_id].recv())
            for _ in range(cmd["a1"]):
                ric.deliver_a1(a1.recv())
            ric.advance_to(t)
            feedback = ric.drain_a1_out()
            for frame in feedback:
                a1.send(frame)
            _send_json(sync, {"done": "advance", "t": t, "a1_out": len(feedback)})
        elif name == "finish":
            statuses = {name_: rt.instance.status()
                        for name_, rt in sorted(ric.deployed.items())}
            _send_json(sync, {
                "done": "finish",
                "metrics": ric.metrics_snapshot(),
                "xapp_status": statuses,
                "pending_inserts": len(ric.pending_inserts),
            })
            return 0
        else:
            _send_json(sync, {"error": f"unknown command {name!r}"})
            return 1


# --- parent ------------------------------------------------------------------------


class TcpRunner:
    def __init__(self, scenario: Scenario, out_dir: Optional[str] = None,
                 capture_path: Optional[str] = None, model_override=None):
        if model_override is not None:
            raise ScenarioInvalid("model_override requires in-process mode")
        self.scenario = scenario
        self.out_dir = Path(out_dir) if out_dir else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.sim = RanSim(scenario.sim_config)
        self.evaluator = ObjectiveEvaluator(
            self.sim, scenario.objectives, scenario.eval_window_ms,
            scenario.warmup_ms)
        self._a1_to_ric: list[bytes] = []
        self.nonrt = NonRtRic(
            a1_send=self._a1_to_ric.append,
            pm_fetcher=self.sim.fetch_pm_blob,
            config=NonRtConfig(
                forecast_enabled=scenario.forecast_enabled,
                forecast_window=scenario.forecast_window,
                forecast_horizon_ms=scenario.forecast_horizon_ms,
                pm_interval_ms=scenario.sim_config.pm_interval_ms))
        self._capture: Optional[CaptureWriter] = None
        self.capture_path = capture_path
        if capture_path:
            self._capture = CaptureWriter(capture_path)

    def capture(self, direction: int, channel: str, frame: bytes) -> None:
        if self._capture is not None:
            self._capture.record(self.sim.clock.now_ms, direction, channel, frame)

    def _xapp_specs(self) -> list[dict]:
        from .runner import resolve_model_path
        model_path = resolve_model_path(self.scenario)
        specs = []
        for spec in self.scenario.xapps:
            if spec.kind not in BUNDLED_XAPPS:
                raise ScenarioInvalid(f"xapps: unknown xapp kind {spec.kind!r}")
            overrides = dict(spec.overrides)
            params = dict(overrides.pop("params", {}) or {})
            if spec.kind == "kpm-monitor" and self.out_dir and "csv_path" not in params:
                params["csv_path"] = str(self.out_dir / "kpm_monitor.csv")
            if spec.kind == "slicing-control" and model_path and \
                    not overrides.get("model_path"):
                overrides["model_path"] = model_path
            specs.append({"kind": spec.kind,
                          "overrides": {"name": spec.name, **overrides, **params}})
        return specs

    def _service_until_done(self) -> dict:
        """Answer child-initiated node requests until the sync done arrives."""
        sel = selectors.DefaultSelector()
        sel.register(self.sync.fileno(), selectors.EVENT_READ, ("sync", None))
        for node_id, conn in self.e2.items():
            sel.register(conn.fileno(), selectors.EVENT_READ, ("e2", node_id))
        try:
            while True:
                for key, _ in sel.select():
                    kind, node_id = key.data
                    if kind == "sync":
                        return _recv_json(self.sync)
                    conn = self.e2[node_id]
                    frame = conn.recv()
                    if frame is CLOSED:
                        raise ScenarioInvalid(f"child closed node link {node_id}")
                    self.capture(1, node_id, frame)
                    resp = self.sim.handle_frame(node_id, frame)
                    if resp is not None:
                        self.capture(0, node_id, resp)
                        conn.send(resp)
        finally:
            sel.close()

    def run(self) -> RunReport:
        scenario = self.scenario
        child = subprocess.Popen(
            [sys.executable, "-m", "oranlab.tcprun"],
            stdout=subprocess.PIPE, text=True)
        try:
            port_line = child.stdout.readline().strip()
            if not port_line.startswith("PORT "):
                raise ScenarioInvalid(f"child failed to start: {port_line!r}")
            port = int(port_line.split()[1])
            node_ids = self.sim.node_ids()
            self.sync = tcp_connect("127.0.0.1", port)
            _send_json(self.sync, {"role": "sync"})
            _send_json(self.sync, {"nodes": node_ids})
            self.e2 = {}
            for node_id in node_ids:
                conn = tcp_connect("127.0.0.1", port)
                _send_json(conn, {"role": "e2", "node": node_id})
                self.e2[node_id] = conn
            self.a1 = tcp_connect("127.0.0.1", port)
            _send_json(self.a1, {"role": "a1"})
            assert _recv_json(self.sync)["done"] == "ready"
            return self._drive(scenario, child)
        finally:
            if child.poll() is None:
                child.kill()
            child.wait()

    def _drive(self, scenario: Scenario, child) -> RunReport:
        # E2 setup, then xApp deployment (subscriptions arrive as requests)
        counts = {}
        for node_id in self.sim.node_ids():
            frame = self.sim.setup_request(node_id)
            self.capture(0, node_id, frame)
            self.e2[node_id].send(frame)
            counts[node_id] = 1
        _send_json(self.sync, {"cmd": "setup", "e2": counts})
        assert self._service_until_done()["done"] == "setup"
        _send_json(self.sync, {"cmd": "deploy", "xapps": self._xapp_specs()})
        assert self._service_until_done()["done"] == "deploy"

        policy_ops = list(scenario.policy_ops)
        for _ in range(scenario.duration_ms // scenario.sim_config.tick_ms):
            self.sim.step(1)
            now = self.sim.clock.now_ms
            self.evaluator.tick()
            for event in self.sim.drain_o1_events():
                self.nonrt.handle_o1_event(event)
            counts = {node_id: 0 for node_id in self.sim.node_ids()}
            for node_id, frame in self.sim.drain_outbox():
                self.capture(0, node_id, frame)
                self.e2[node_id].send(frame)
                counts[node_id] += 1
            while policy_ops and policy_ops[0].at_ms <= now:
                op = policy_ops.pop(0)
                self._apply_policy_op(op)
            self.nonrt.advance_to(now)
            a1_frames = list(self._a1_to_ric)
            self._a1_to_ric.clear()
            for frame in a1_frames:
                self.capture(2, "a1", frame)
                self.a1.send(frame)
            _send_json(self.sync, {
                "cmd": "advance", "t": now,
                "e2": {k: counts[k] for k in sorted(counts)},
                "a1": len(a1_frames)})
            done = self._service_until_done()
            assert done["done"] == "advance" and done["t"] == now
            for _ in range(done["a1_out"]):
                frame = self.a1.recv()
                self.capture(3, "a1", frame)
                self.nonrt.handle_a1_feedback(frame)

        _send_json(self.sync, {"cmd": "finish"})
        finish = self._service_until_done()
        assert finish["done"] == "finish"
        child.wait(timeout=10)
        if self._capture is not None:
            self._capture.close()
        return self._report(finish)

    def _apply_policy_op(self, op) -> None:
        from .errors import OranError
        try:
            if op.op == "create":
                self.nonrt.policy_store.create(op.policy)
            elif op.op == "update":
                self.nonrt.policy_store.update(op.policy)
            else:
                self.nonrt.policy_store.delete(op.policy["policy_id"])
        except OranError as exc:
            raise ScenarioInvalid(f"a1_policies: {exc}") from exc

    def _report(self, finish: dict) -> RunReport:
        summary = self.evaluator.summary()
        ric_metrics = finish["metrics"]
        sim_counters = {node_id: self.sim.counters(node_id)
                        for node_id in self.sim.node_ids()}
        inserts = ric_metrics["inserts_received"]
        resolved = (ric_metrics["insert_replied_accept"]
                    + ric_metrics["insert_replied_deny"]
                    + ric_metrics["insert_timeout"])
        consistent = inserts == resolved + finish["pending_inserts"]
        csv_paths: dict[str, str] = {}
        if self.out_dir:
            metrics_path = self.out_dir / "ric_metrics.csv"
            metrics_path.write_text(metrics_csv(ric_metrics), encoding="utf-8")
            csv_paths["ric_metrics"] = str(metrics_path)
            kpm_csv = self.out_dir / "kpm_monitor.csv"
            if kpm_csv.exists():
                csv_paths["kpm_monitor"] = str(kpm_csv)
            pm_dir = self.out_dir / "pm"
            pm_dir.mkdir(exist_ok=True)
            for (node_id, interval), blob in sorted(self.nonrt.pm.files.items()):
                (pm_dir / f"{node_id}_{interval:05d}.csv").write_bytes(blob)
            csv_paths["pm_dir"] = str(pm_dir)
        report = RunReport(
            scenario=self.scenario.name,
            seed=self.scenario.seed,
            duration_ms=self.scenario.duration_ms,
            warmup_ms=self.scenario.warmup_ms,
            state_hash=self.sim.state_hash(),
            objective_satisfaction=summary["objective_satisfaction"],
            violation_rate=summary["violation_rate"],
            mean_cost=summary["mean_cost"],
            windows=summary["windows"],
            per_window=summary["per_window"],
            ric_metrics=ric_metrics,
            sim_counters=sim_counters,
            heartbeat_transitions=[list(t) for t in self.nonrt.heartbeats.transitions],
            policy_feedback=list(self.nonrt.policy_store.feedback_log),
            xapp_status=finish["xapp_status"],
            csv_paths=csv_paths,
            capture_path=self.capture_path,
            consistent=consistent,
        )
        if self.out_dir:
            (self.out_dir / "report.json").write_text(report.to_json(),
                                                      encoding="utf-8")
        return report


if __name__ == "__main__":
    sys.exit(child_main())
