"""The closed-loop harness: wires sim, near-RT RIC, and non-RT RIC together
under lockstep simulated time and produces a RunReport plus CSV artifacts.

Per tick, in fixed order: the sim advances one TTI; O1 events reach the
SMO; E2 frames reach the RIC; scenario A1 policy ops due at this tick are
pushed; the rApp and heartbeat monitor advance; the RIC runs its timers
(xApp ticks issue controls synchronously through per-node links); A1
feedback flows back. The same order runs in --tcp mode with the RIC in a
child process, so reports are identical across modes for a seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import e2codec
from .errors import MalformedCapture, ScenarioInvalid
from .nonrt import NonRtConfig, NonRtRic
from .objectives import SlicingObjectives, priority_weights, slice_violation
from .ransim import RanSim
from .ric import NearRtRic, RicConfig
from .scenario import Scenario, XappSpec
from .xapps import BUNDLED_XAPPS, default_descriptor

CAPTURE_MAGIC = b"ORANCAP1"
DIR_NAMES = {0: "node->ric", 1: "ric->node", 2: "nonrt->ric", 3: "ric->nonrt"}


class CaptureWriter:
    def __init__(self, path: str):
        self._fh = open(path, "wb")
        self._fh.write(CAPTURE_MAGIC)

    def record(self, t_ms: int, direction: int, channel: str, frame: bytes) -> None:
        name = channel.encode("utf-8")
        self._fh.write(struct.pack(">QBH", t_ms, direction, len(name)))
        self._fh.write(name)
        self._fh.write(struct.pack(">I", len(frame)))
        self._fh.write(frame)

    def close(self) -> None:
        self._fh.close()


def read_capture(path: str) -> list[tuple[int, int, str, bytes]]:
    data = Path(path).read_bytes()
    if not data.startswith(CAPTURE_MAGIC):
        raise MalformedCapture("bad capture magic at byte 0")
    records = []
    pos = len(CAPTURE_MAGIC)
    while pos < len(data):
        if pos + 11 > len(data):
            raise MalformedCapture(f"truncated record header at byte {pos}")
        t_ms, direction, name_len = struct.unpack(">QBH", data[pos:pos + 11])
        pos += 11
        if pos + name_len + 4 > len(data):
            raise MalformedCapture(f"truncated record at byte {pos}")
        channel = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (frame_len,) = struct.unpack(">I", data[pos:pos + 4])
        pos += 4
        if pos + frame_len > len(data):
            raise MalformedCapture(f"truncated frame at byte {pos}")
        records.append((t_ms, direction, channel, data[pos:pos + frame_len]))
        pos += frame_len
    return records


def inspect_capture(path: str) -> str:
    """Chronological human-readable log of a wire capture."""
    lines = []
    for t_ms, direction, channel, frame in read_capture(path):
        kind = DIR_NAMES.get(direction, f"dir{direction}")
        lines.append(f"--- t={t_ms}ms {kind} [{channel}] {len(frame)} bytes")
        if direction in (0, 1):
            try:
                lines.append(e2codec.render_debug(e2codec.decode(frame)).rstrip("\n"))
            except Exception as exc:  # noqa: BLE001 - show raw on any decode issue
                lines.append(f"  (undecodable: {exc})")
        else:
            try:
                lines.append("  " + json.dumps(json.loads(frame.decode()), sort_keys=True))
            except Exception:  # noqa: BLE001
                lines.append(f"  (not JSON: {frame[:40]!r})")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class WindowStat:
    t_end_ms: int
    demand: dict[str, float]
    granted: dict[str, float]
    violated: dict[str, bool]
    cost: float


class ObjectiveEvaluator:
    """Per-window objective bookkeeping, tapping the sim state directly so
    it stays independent of the wire path it is judging."""

    def __init__(self, sim: RanSim, objectives: SlicingObjectives,
                 window_ms: int, warmup_ms: int):
        self.sim = sim
        self.objectives = objectives
        self.window_ms = window_ms
        self.warmup_ms = warmup_ms
        self.kind_of: dict[str, str] = {}
        for node in sim.config.nodes:
            for cell in node.cells:
                for s in cell.slices:
                    self.kind_of[s.slice_id] = s.kind
        self._acc: dict[str, dict[str, float]] = {}
        self._ticks = 0
        self.windows: list[WindowStat] = []

    def tick(self) -> None:
        self._ticks += 1
        for node in self.sim.nodes.values():
            for cell in node.cells.values():
                for slice_id, srt in cell.slices.items():
                    acc = self._acc.setdefault(slice_id, {
                        "tx_bytes": 0.0, "tx_packets": 0.0,
                        "prb_requested": 0.0, "prb_granted": 0.0})
                    acc["tx_bytes"] += srt.d_served
                    acc["tx_packets"] += srt.d_packets
                    acc["prb_requested"] += srt.d_prb_requested
                    acc["prb_granted"] += srt.d_prb_granted
        if self._ticks * self.sim.config.tick_ms >= self.window_ms:
            self._close_window()

    def _close_window(self) -> None:
        now = self.sim.clock.now_ms
        demand, granted, violated = {}, {}, {}
        for node in self.sim.nodes.values():
            for cell in node.cells.values():
                for slice_id, srt in cell.slices.items():
                    acc = self._acc.get(slice_id, {})
                    buffered = float(sum(self.sim.ues[uid].buffer for uid in srt.members))
                    served = acc.get("tx_bytes", 0.0)
                    if buffered == 0.0:
                        latency = 0.0
                    elif served == 0.0:
                        latency = 1e6
                    else:
                        latency = buffered / (served / self.window_ms)
                    metrics = {
                        "tx_bytes": served,
                        "tx_packets": acc.get("tx_packets", 0.0),
                        "buffer_bytes": buffered,
                        "latency_proxy_ms": latency,
                    }
                    ticks = self.window_ms / self.sim.config.tick_ms
                    demand[slice_id] = demand.get(slice_id, 0.0) + \
                        acc.get("prb_requested", 0.0) / ticks
                    granted[slice_id] = granted.get(slice_id, 0.0) + \
                        acc.get("prb_granted", 0.0) / ticks
                    violated[slice_id] = violated.get(slice_id, False) or \
                        slice_violation(self.kind_of.get(slice_id, slice_id),
                                        self.objectives, metrics, self.window_ms)
        weights = priority_weights(self.objectives.priority)
        cost = sum(weights.get(s, 1.0) * max(0.0, demand[s] - granted[s])
                   for s in demand)
        self.windows.append(WindowStat(now, demand, granted, violated, cost))
        self._acc.clear()
        self._ticks = 0

    def summary(self) -> dict:
        scored = [w for w in self.windows if w.t_end_ms > self.warmup_ms]
        if not scored:
            return {"windows": 0, "violation_rate": 0.0,
                    "objective_satisfaction": {}, "mean_cost": 0.0,
                    "per_window": []}
        slices = sorted({s for w in scored for s in w.violated})
        satisfaction = {}
        for s in slices:
            bad = sum(1 for w in scored if w.violated.get(s, False))
            satisfaction[s] = 1.0 - bad / len(scored)
        any_bad = sum(1 for w in scored if any(w.violated.values()))
        return {
            "windows": len(scored),
            "violation_rate": any_bad / len(scored),
            "objective_satisfaction": satisfaction,
            "mean_cost": sum(w.cost for w in scored) / len(scored),
            "per_window": [
                {"t_end_ms": w.t_end_ms,
                 "demand": {k: round(v, 6) for k, v in sorted(w.demand.items())},
                 "granted": {k: round(v, 6) for k, v in sorted(w.granted.items())},
                 "violated": {k: w.violated[k] for k in sorted(w.violated)},
                 "cost": round(w.cost, 6)}
                for w in scored],
        }


@dataclass
class RunReport:
    scenario: str
    seed: int
    duration_ms: int
    warmup_ms: int
    state_hash: str
    objective_satisfaction: dict
    violation_rate: float
    mean_cost: float
    windows: int
    per_window: list
    ric_metrics: dict
    sim_counters: dict
    heartbeat_transitions: list
    policy_feedback: list
    xapp_status: dict
    csv_paths: dict
    capture_path: Optional[str] = None
    consistent: bool = True

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2,
                          default=str) + "\n"


def resolve_model_path(scenario: Scenario) -> Optional[str]:
    """Catalog lookup for a scenario's model_id; only published entries
    (model file plus manifest) resolve."""
    if not scenario.model_id:
        return None
    if not scenario.catalog_dir:
        raise ScenarioInvalid("model_id set but catalog_dir missing")
    base = Path(scenario.catalog_dir) / scenario.model_id
    if not (base / "manifest.txt").exists() or not (base / "model.tbl").exists():
        raise ScenarioInvalid(
            f"model_id: {scenario.model_id!r} is not published in "
            f"{scenario.catalog_dir}")
    return str(base / "model.tbl")


class _RecordingLink:
    """In-process node link: request() runs the node handler synchronously;
    both directions optionally land in the capture."""

    def __init__(self, sim: RanSim, node_id: str, runner: "InProcessRunner"):
        self.sim = sim
        self.node_id = node_id
        self.runner = runner

    def send(self, frame: bytes) -> None:
        self.runner.capture(1, self.node_id, frame)

    def request(self, frame: bytes) -> bytes:
        self.runner.capture(1, self.node_id, frame)
        resp = self.sim.handle_frame(self.node_id, frame)
        self.runner.capture(0, self.node_id, resp)
        return resp


class InProcessRunner:
    def __init__(self, scenario: Scenario, out_dir: Optional[str] = None,
                 capture_path: Optional[str] = None, model_override=None):
        self.scenario = scenario
        # pipeline-internal: validation runs a model before it has earned
        # its validation record, bypassing the file-load gate
        self.model_override = model_override
        self.out_dir = Path(out_dir) if out_dir else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.sim = RanSim(scenario.sim_config)
        self.ric = NearRtRic(RicConfig())
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
        self.xapp_instances: dict[str, object] = {}

    def capture(self, direction: int, channel: str, frame: bytes) -> None:
        if self._capture is not None:
            self._capture.record(self.sim.clock.now_ms, direction, channel, frame)

    # --- setup ------------------------------------------------------------------

    def _deploy_xapps(self) -> None:
        model_path = resolve_model_path(self.scenario)
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
            descriptor = default_descriptor(
                spec.kind, name=spec.name, **overrides, **params)
            instance = BUNDLED_XAPPS[spec.kind](descriptor)
            self.ric.onboard(descriptor)
            self.ric.deploy(descriptor.name, instance=instance)
            self.xapp_instances[spec.name] = instance
            if spec.kind == "slicing-control" and self.model_override is not None:
                instance.model = self.model_override
                instance.model_id = self.model_override.model_id

    def setup(self) -> None:
        for node_id in self.sim.node_ids():
            link = _RecordingLink(self.sim, node_id, self)
            self.ric.attach_link(node_id, link)
            setup_frame = self.sim.setup_request(node_id)
            self.capture(0, node_id, setup_frame)
            self.ric.deliver_e2(node_id, setup_frame)
        self._deploy_xapps()

    # --- the loop ----------------------------------------------------------------

    def run(self) -> RunReport:
        scenario = self.scenario
        self.setup()
        policy_ops = list(scenario.policy_ops)
        for _ in range(scenario.duration_ms // scenario.sim_config.tick_ms):
            self.sim.step(1)
            now = self.sim.clock.now_ms
            self.ric.now_ms = now  # frames arriving this tick see current time
            self.evaluator.tick()
            for event in self.sim.drain_o1_events():
                self.nonrt.handle_o1_event(event)
            for node_id, frame in self.sim.drain_outbox():
                self.capture(0, node_id, frame)
                self.ric.deliver_e2(node_id, frame)
            while policy_ops and policy_ops[0].at_ms <= now:
                op = policy_ops.pop(0)
                self._apply_policy_op(op)
            self.nonrt.advance_to(now)
            for frame in self._drain_a1_to_ric():
                self.capture(2, "a1", frame)
                self.ric.deliver_a1(frame)
            self.ric.advance_to(now)
            for frame in self.ric.drain_a1_out():
                self.capture(3, "a1", frame)
                self.nonrt.handle_a1_feedback(frame)
        if self._capture is not None:
            self._capture.close()
        return self._report()

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

    def _drain_a1_to_ric(self) -> list[bytes]:
        out, self._a1_to_ric[:] = list(self._a1_to_ric), []
        return out

    # --- reporting ---------------------------------------------------------------

    def _report(self) -> RunReport:
        summary = self.evaluator.summary()
        ric_metrics = self.ric.metrics_snapshot()
        sim_counters = {node_id: self.sim.counters(node_id)
                        for node_id in self.sim.node_ids()}
        inserts = ric_metrics["inserts_received"]
        resolved = (ric_metrics["insert_replied_accept"]
                    + ric_metrics["insert_replied_deny"]
                    + ric_metrics["insert_timeout"])
        pending = len(self.ric.pending_inserts)
        consistent = inserts == resolved + pending
        csv_paths: dict[str, str] = {}
        if self.out_dir:
            metrics_path = self.out_dir / "ric_metrics.csv"
            metrics_path.write_text(self.ric.metrics_csv(), encoding="utf-8")
            csv_paths["ric_metrics"] = str(metrics_path)
            kpm_csv = self.out_dir / "kpm_monitor.csv"
            if kpm_csv.exists():
                csv_paths["kpm_monitor"] = str(kpm_csv)
            pm_dir = self.out_dir / "pm"
            pm_dir.mkdir(exist_ok=True)
            for (node_id, interval), blob in sorted(self.nonrt.pm.files.items()):
                path = pm_dir / f"{node_id}_{interval:05d}.csv"
                path.write_bytes(blob)
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
            xapp_status={name: inst.status()
                         for name, inst in sorted(self.xapp_instances.items())},
            csv_paths=csv_paths,
            capture_path=self.capture_path,
            consistent=consistent,
        )
        if self.out_dir:
            (self.out_dir / "report.json").write_text(report.to_json(),
                                                      encoding="utf-8")
        return report


def run_scenario(scenario: Scenario, out_dir: Optional[str] = None,
                 seed: Optional[int] = None,
                 capture_path: Optional[str] = None,
                 tcp: bool = False, model_override=None) -> RunReport:
    if seed is not None:
        scenario = scenario.with_seed(seed)
    if tcp:
        from .tcprun import TcpRunner
        return TcpRunner(scenario, out_dir, capture_path, model_override).run()
    return InProcessRunner(scenario, out_dir, capture_path, model_override).run()
