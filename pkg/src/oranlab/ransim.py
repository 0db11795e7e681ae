"""Deterministic discrete-time RAN of slice-scheduling DU nodes.

One tick is one TTI (default 1 ms). Per tick, in fixed order: UE mobility,
traffic arrivals into per-UE packet queues, per-slice PRB scheduling
(round-robin or highest-buffer-first), installed control-policy rules,
A3 handover triggering and insert-timer expiry, KPM report timers, and O1
timers (heartbeats, PM files). The link layer is abstracted to a fixed
bytes-per-PRB-per-TTI rate.

All state transitions derive from the scenario config and the seed; the
full state is hashable for determinism checks. No wall-clock reads.
"""

from __future__ import annotations

import hashlib
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import e2codec
from .e2codec import (
    ActionType, Cause, CauseKind, ControlAcknowledge, ControlFailure,
    ControlRequest, E2apPdu, Indication, IndicationType, RanFunction,
    RicAction, RicRequestId, ServiceUpdate, ServiceUpdateAck, SetupRequest,
    SubscriptionDeleteRequest, SubscriptionDeleteResponse,
    SubscriptionFailure, SubscriptionRequest, SubscriptionResponse,
)
from .e2sm import (
    CellInfo, ControlPolicy, HandoverCommand, HandoverInsert,
    KpmActionDefinition, KpmEventTrigger, KpmFunctionDefinition,
    KpmIndicationHeader, KpmMeasurements, KpmRecord, ModelId,
    NiFunctionDefinition, NodeKind, OffsetPolicy, RcActionDefinition,
    RcControl, RcDomain, RcEventTrigger, RcFunctionDefinition,
    SchedulerPolicy, Scope, ScopeKind, SlicePrbQuota, SliceScheduler,
    encode_payload, metric_catalog, sm_decode,
)
from .errors import (
    InfeasibleQuota, InvariantViolation, MalformedPayload, UnknownServiceModel,
    UnknownTarget, UnsupportedDomain,
)

KPM_FUNCTION_ID = 1
RC_FUNCTION_ID = 2
NI_FUNCTION_ID = 3

DEFAULT_BYTES_PER_PRB = 1000
DEFAULT_A3_OFFSET_DB = 3.0
DEFAULT_P0_DBM = -40.0
DEFAULT_PATHLOSS_EXP = 3.0
LATENCY_CLAMP_MS = 1e6

PM_COLUMNS = "time_ms,node,cell,slice,metric,value"


@dataclass
class SimClock:
    """Source of all simulated time. `now_ms` advances only via tick()."""

    tick_ms: int = 1
    now_ms: int = 0

    def tick(self) -> int:
        self.now_ms += self.tick_ms
        return self.now_ms


@dataclass(frozen=True)
class TrafficSpec:
    """Per-UE demand generator.

    constant: one packet of `rate_bytes` every tick
    periodic: one packet of `burst_bytes` every `period_ms`
    poisson:  Poisson(mean_bytes/packet_bytes) packets of `packet_bytes`
              per tick, from a per-UE seeded stream

    Nothing arrives before `start_ms` (regime-shift scenarios).
    """

    kind: str = "constant"
    rate_bytes: int = 0
    burst_bytes: int = 0
    period_ms: int = 10
    mean_bytes: float = 0.0
    packet_bytes: int = 500
    start_ms: int = 0


@dataclass(frozen=True)
class SliceConfig:
    slice_id: str
    kind: str  # urllc | embb | mmtc
    dedicated_prb: int = 0
    scheduler: SliceScheduler = SliceScheduler.ROUND_ROBIN


@dataclass(frozen=True)
class CellConfig:
    cell_id: int
    global_id: int
    total_prb: int
    position: tuple[float, float] = (0.0, 0.0)
    slices: tuple[SliceConfig, ...] = ()
    a3_offset_db: float = DEFAULT_A3_OFFSET_DB


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    cells: tuple[CellConfig, ...] = ()


@dataclass(frozen=True)
class UeConfig:
    ue_id: int
    slice_id: str
    cell_id: int
    position: tuple[float, float] = (0.0, 0.0)
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    # piecewise-linear waypoints: (x, y, at_ms), sorted by time
    path: tuple[tuple[float, float, int], ...] = ()


@dataclass(frozen=True)
class SimConfig:
    nodes: tuple[NodeConfig, ...]
    ues: tuple[UeConfig, ...]
    seed: int = 1
    tick_ms: int = 1
    bytes_per_prb: int = DEFAULT_BYTES_PER_PRB
    p0_dbm: float = DEFAULT_P0_DBM
    pathloss_exp: float = DEFAULT_PATHLOSS_EXP
    kpm_band_ms: tuple[int, int] = (10, 1000)
    heartbeat_period_ms: int = 1000
    pm_interval_ms: int = 1000
    # on insert wait-timer expiry: continue the suspended handover or halt it
    insert_timeout_executes: bool = True
    a3_holdoff_ms: int = 1000


def rsrp_dbm(cell_pos: tuple[float, float], ue_pos: tuple[float, float],
             p0_dbm: float = DEFAULT_P0_DBM, exponent: float = DEFAULT_PATHLOSS_EXP) -> float:
    """Log-distance path loss, no fading: p0 - 10*n*log10(max(d, 1))."""
    d = math.hypot(cell_pos[0] - ue_pos[0], cell_pos[1] - ue_pos[1])
    return p0_dbm - 10.0 * exponent * math.log10(max(d, 1.0))


def _poisson(rng: random.Random, lam: float) -> int:
    if lam <= 0:
        return 0
    limit = math.exp(-lam)
    k, p = 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


@dataclass
class _PendingInsert:
    call_process_id: bytes
    ue_id: int
    serving_global_id: int
    candidate_global_id: int
    deadline_ms: int


class _SliceRt:
    """Runtime state and counters for one (cell, slice)."""

    def __init__(self, cfg: SliceConfig):
        self.cfg = cfg
        self.dedicated_prb = cfg.dedicated_prb
        self.scheduler = cfg.scheduler
        self.rr_cursor = 0
        self.members: list[int] = []  # ue ids, kept sorted
        # cumulative counters (exact integers)
        self.arrived = 0
        self.served = 0
        self.packets_done = 0
        self.migrated_in = 0
        self.migrated_out = 0
        # per-tick deltas, reset each tick
        self.d_arrived = 0
        self.d_served = 0
        self.d_packets = 0
        self.d_prb_granted = 0
        self.d_prb_requested = 0

    def reset_deltas(self) -> None:
        self.d_arrived = self.d_served = self.d_packets = 0
        self.d_prb_granted = self.d_prb_requested = 0


class _CellRt:
    def __init__(self, cfg: CellConfig):
        self.cfg = cfg
        self.tunables: dict[str, float] = {"a3_offset_db": cfg.a3_offset_db}
        self.slices: dict[str, _SliceRt] = {
            s.slice_id: _SliceRt(s) for s in cfg.slices}

    def dedicated_total(self) -> int:
        return sum(s.dedicated_prb for s in self.slices.values())


class _UeRt:
    def __init__(self, cfg: UeConfig, node_id: str, seed: int):
        self.cfg = cfg
        self.node_id = node_id
        self.cell_id = cfg.cell_id
        self.position = cfg.position
        self.queue: deque[int] = deque()  # remaining bytes per packet, FIFO
        self.buffer = 0
        self.rng = random.Random((seed << 20) ^ (cfg.ue_id * 2654435761 % 2**32))
        self.pending: Optional[_PendingInsert] = None
        self.holdoff_until = 0
        # per-tick deltas for ue-scoped subscriptions
        self.d_arrived = 0
        self.d_served = 0
        self.d_packets = 0
        self.d_prb = 0

    def reset_deltas(self) -> None:
        self.d_arrived = self.d_served = self.d_packets = self.d_prb = 0


class _KpmSub:
    def __init__(self, request_id: RicRequestId, action_id: int,
                 period_ms: int, action_def: KpmActionDefinition, start_ms: int):
        self.request_id = request_id
        self.action_id = action_id
        self.period_ms = period_ms
        self.action_def = action_def
        self.next_report = start_ms + period_ms
        self.window_start = start_ms
        self.seq = 0
        # unit key -> metric -> accumulated sum (summable metrics only)
        self.sums: dict[tuple, dict[str, float]] = {}


class _InsertSub:
    def __init__(self, request_id: RicRequestId, action_id: int, wait_ms: int):
        self.request_id = request_id
        self.action_id = action_id
        self.wait_ms = wait_ms


class _NodePolicy:
    def __init__(self, policy: ControlPolicy):
        self.policy = policy
        self.armed = True  # edge-triggered: fire on False->True transitions


class _NodeRt:
    def __init__(self, cfg: NodeConfig, sim: "RanSim"):
        self.cfg = cfg
        self.sim = sim
        self.cells: dict[int, _CellRt] = {c.cell_id: _CellRt(c) for c in cfg.cells}
        # keyed by (requestor, instance); one entry per admitted report action
        self.kpm_subs: dict[tuple[int, int], list[_KpmSub]] = {}
        self.insert_sub: Optional[_InsertSub] = None
        self.policies: list[_NodePolicy] = []
        self.call_process_counter = 0
        self.next_heartbeat = 0
        self.next_pm = 0
        self.pm_interval_index = 0
        self.pm_blobs: dict[int, bytes] = {}
        self.pm_accum: dict[tuple[int, str], dict[str, float]] = {}
        # counters
        self.handover_count = 0
        self.d_handover = 0
        self.inserts_emitted = 0
        self.inserts_accepted = 0
        self.inserts_denied = 0
        self.inserts_timeout = 0

    def functions(self) -> tuple[RanFunction, ...]:
        cells = tuple(
            CellInfo(c.cell_id, c.global_id, c.total_prb,
                     tuple(s.slice_id for s in c.slices))
            for c in self.cfg.cells)
        return (
            RanFunction(KPM_FUNCTION_ID, "kpm", 1, encode_payload(
                KpmFunctionDefinition((NodeKind.DU, NodeKind.CU_UP, NodeKind.CU_CP)))),
            RanFunction(RC_FUNCTION_ID, "rc", 1, encode_payload(
                RcFunctionDefinition((RcDomain.RESOURCE_ALLOCATION,
                                      RcDomain.MOBILITY, RcDomain.POLICY), cells))),
            RanFunction(NI_FUNCTION_ID, "ni", 1, encode_payload(
                NiFunctionDefinition(("x2", "xn", "f1")))),
        )


class RanSim:
    """The simulated RAN: E2 nodes plus global UE registry and clock."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.clock = SimClock(tick_ms=config.tick_ms)
        self.nodes: dict[str, _NodeRt] = {}
        self.cell_node: dict[int, str] = {}
        self.cell_by_global: dict[int, tuple[str, int]] = {}
        for node_cfg in sorted(config.nodes, key=lambda n: n.node_id):
            node = _NodeRt(node_cfg, self)
            self.nodes[node_cfg.node_id] = node
            for cell in node_cfg.cells:
                if cell.cell_id in self.cell_node:
                    raise InvariantViolation(f"duplicate cell_id {cell.cell_id}")
                if cell.global_id in self.cell_by_global:
                    raise InvariantViolation(f"duplicate cell global_id {cell.global_id}")
                if sum(s.dedicated_prb for s in cell.slices) > cell.total_prb:
                    raise InvariantViolation(
                        f"cell {cell.cell_id}: dedicated PRBs exceed capacity")
                self.cell_node[cell.cell_id] = node_cfg.node_id
                self.cell_by_global[cell.global_id] = (node_cfg.node_id, cell.cell_id)
        self.ues: dict[int, _UeRt] = {}
        for ue_cfg in sorted(config.ues, key=lambda u: u.ue_id):
            node_id = self.cell_node.get(ue_cfg.cell_id)
            if node_id is None:
                raise InvariantViolation(f"ue {ue_cfg.ue_id}: unknown cell {ue_cfg.cell_id}")
            cell = self.nodes[node_id].cells[ue_cfg.cell_id]
            if ue_cfg.slice_id not in cell.slices:
                raise InvariantViolation(
                    f"ue {ue_cfg.ue_id}: cell {ue_cfg.cell_id} does not host slice {ue_cfg.slice_id}")
            ue = _UeRt(ue_cfg, node_id, config.seed)
            self.ues[ue_cfg.ue_id] = ue
            self._slice_of(ue).members.append(ue_cfg.ue_id)
        for node in self.nodes.values():
            for cell in node.cells.values():
                for srt in cell.slices.values():
                    srt.members.sort()
        # pending moves applied at the start of the next tick
        self._moves: list[tuple[int, int]] = []  # (ue_id, target_global_id)
        self.outbox: list[tuple[str, bytes]] = []
        self.o1_events: list[dict] = []

    # --- helpers ------------------------------------------------------------

    def _slice_of(self, ue: _UeRt) -> _SliceRt:
        return self.nodes[ue.node_id].cells[ue.cell_id].slices[ue.cfg.slice_id]

    def _cell_of(self, ue: _UeRt) -> _CellRt:
        return self.nodes[ue.node_id].cells[ue.cell_id]

    def rsrp(self, cell: CellConfig, ue_pos: tuple[float, float]) -> float:
        return rsrp_dbm(cell.position, ue_pos, self.config.p0_dbm, self.config.pathloss_exp)

    def setup_request(self, node_id: str) -> bytes:
        node = self.nodes[node_id]
        return e2codec.encode(E2apPdu.wrap(SetupRequest(node_id, node.functions())))

    def node_ids(self) -> list[str]:
        return list(self.nodes.keys())

    # --- E2 ingress -----------------------------------------------------------

    def handle_frame(self, node_id: str, data: bytes) -> Optional[bytes]:
        """Process one RIC-initiated E2 message addressed to a node; returns
        the response frame (None for messages that take no response)."""
        node = self.nodes[node_id]
        pdu = e2codec.decode(data)
        body = pdu.body
        if isinstance(body, SubscriptionRequest):
            return e2codec.encode(E2apPdu.wrap(self._handle_subscription(node, body)))
        if isinstance(body, SubscriptionDeleteRequest):
            node.kpm_subs.pop((body.request_id.requestor_id, body.request_id.instance_id), None)
            sub = node.insert_sub
            if sub is not None and sub.request_id == body.request_id:
                node.insert_sub = None
            return e2codec.encode(E2apPdu.wrap(SubscriptionDeleteResponse(body.request_id)))
        if isinstance(body, ControlRequest):
            return e2codec.encode(E2apPdu.wrap(self._handle_control(node, body)))
        return None

    def _handle_subscription(self, node: _NodeRt, req: SubscriptionRequest):
        if req.function_id == KPM_FUNCTION_ID:
            return self._admit_kpm(node, req)
        if req.function_id == RC_FUNCTION_ID:
            return self._admit_rc(node, req)
        return SubscriptionFailure(req.request_id, Cause(
            CauseKind.UNSUPPORTED, f"function {req.function_id} takes no subscriptions"))

    def _admit_kpm(self, node: _NodeRt, req: SubscriptionRequest):
        try:
            model, trigger = sm_decode(req.event_trigger)
        except (MalformedPayload, UnknownServiceModel) as exc:
            return SubscriptionFailure(req.request_id, Cause(CauseKind.REJECTED, str(exc)))
        if model != ModelId.KPM or not isinstance(trigger, KpmEventTrigger):
            return SubscriptionFailure(req.request_id, Cause(
                CauseKind.REJECTED, "kpm subscription needs a kpm event trigger"))
        try:
            trigger.check(self.config.kpm_band_ms)
        except InvariantViolation as exc:
            return SubscriptionFailure(req.request_id, Cause(CauseKind.REJECTED, str(exc)))
        admitted, rejected = [], []
        subs = []
        for action in req.actions:
            defn = self._decode_kpm_action(node, action)
            if action.action_type == ActionType.REPORT and defn is not None:
                admitted.append(action.action_id)
                subs.append(_KpmSub(req.request_id, action.action_id,
                                    trigger.report_period_ms, defn, self.clock.now_ms))
            else:
                rejected.append(action.action_id)
        if not admitted:
            return SubscriptionFailure(req.request_id, Cause(
                CauseKind.REJECTED, "no admissible actions"))
        key = (req.request_id.requestor_id, req.request_id.instance_id)
        node.kpm_subs[key] = subs
        return SubscriptionResponse(req.request_id, tuple(admitted), tuple(rejected))

    def _decode_kpm_action(self, node: _NodeRt, action: RicAction) -> Optional[KpmActionDefinition]:
        try:
            model, defn = sm_decode(action.definition)
        except (MalformedPayload, UnknownServiceModel):
            return None
        if model != ModelId.KPM or not isinstance(defn, KpmActionDefinition):
            return None
        scope = defn.scope
        if scope.kind in (ScopeKind.CELL, ScopeKind.SLICE):
            cell = node.cells.get(scope.cell_id)
            if cell is None:
                return None
            if scope.kind == ScopeKind.SLICE and scope.slice_id not in cell.slices:
                return None
        if scope.kind == ScopeKind.UE and scope.ue_id not in self.ues:
            return None
        return defn

    def _admit_rc(self, node: _NodeRt, req: SubscriptionRequest):
        admitted, rejected = [], []
        for action in req.actions:
            if action.action_type == ActionType.INSERT:
                wait_ms = 10
                if action.subsequent is not None:
                    wait_ms = action.subsequent.time_to_wait.millis
                node.insert_sub = _InsertSub(req.request_id, action.action_id, wait_ms)
                admitted.append(action.action_id)
            elif action.action_type == ActionType.POLICY:
                try:
                    model, payload = sm_decode(action.definition)
                except (MalformedPayload, UnknownServiceModel):
                    rejected.append(action.action_id)
                    continue
                if model == ModelId.RC and isinstance(payload, ControlPolicy):
                    node.policies.append(_NodePolicy(payload))
                    admitted.append(action.action_id)
                else:
                    rejected.append(action.action_id)
            else:
                rejected.append(action.action_id)
        if not admitted:
            return SubscriptionFailure(req.request_id, Cause(
                CauseKind.REJECTED, "no admissible actions"))
        return SubscriptionResponse(req.request_id, tuple(admitted), tuple(rejected))

    # --- controls ---------------------------------------------------------------

    def _handle_control(self, node: _NodeRt, req: ControlRequest):
        try:
            model, control = sm_decode(req.message)
        except (MalformedPayload, UnknownServiceModel) as exc:
            return ControlFailure(req.request_id, Cause(CauseKind.REJECTED, str(exc)))
        if model != ModelId.RC:
            return ControlFailure(req.request_id, Cause(
                CauseKind.REJECTED, "control message must carry an RC payload"))
        try:
            outcome = self.apply_control(node.cfg.node_id, control,
                                         call_process_id=req.call_process_id)
        except (InfeasibleQuota, UnknownTarget, UnsupportedDomain) as exc:
            kind = CauseKind.TIMEOUT if "stale" in str(exc) else CauseKind.REJECTED
            return ControlFailure(req.request_id, Cause(kind, str(exc)))
        return ControlAcknowledge(req.request_id, outcome)

    def apply_control(self, node_id: str, control: RcControl,
                      call_process_id: Optional[bytes] = None) -> bytes:
        """Apply an RC control to node state; returns outcome bytes or raises
        InfeasibleQuota / UnknownTarget / UnsupportedDomain."""
        node = self.nodes[node_id]
        if isinstance(control, SlicePrbQuota):
            cell = node.cells.get(control.cell_id)
            if cell is None:
                raise UnknownTarget(f"node {node_id} has no cell {control.cell_id}")
            srt = cell.slices.get(control.slice_id)
            if srt is None:
                raise UnknownTarget(f"cell {control.cell_id} has no slice {control.slice_id}")
            new_total = cell.dedicated_total() - srt.dedicated_prb + control.dedicated_prb
            if new_total > cell.cfg.total_prb:
                raise InfeasibleQuota(
                    f"quota sum {new_total} exceeds cell capacity {cell.cfg.total_prb}")
            srt.dedicated_prb = control.dedicated_prb
            return f"quota cell={control.cell_id} slice={control.slice_id} " \
                   f"dedicated={control.dedicated_prb}".encode()
        if isinstance(control, HandoverCommand):
            return self._apply_handover(node, control, call_process_id)
        if isinstance(control, SchedulerPolicy):
            cell = node.cells.get(control.cell_id)
            if cell is None:
                raise UnknownTarget(f"node {node_id} has no cell {control.cell_id}")
            srt = cell.slices.get(control.slice_id)
            if srt is None:
                raise UnknownTarget(f"cell {control.cell_id} has no slice {control.slice_id}")
            srt.scheduler = control.scheduler
            return f"scheduler cell={control.cell_id} slice={control.slice_id} " \
                   f"{control.scheduler.name.lower()}".encode()
        if isinstance(control, ControlPolicy):
            if control.trigger_metric not in metric_catalog(NodeKind.DU):
                raise UnknownTarget(f"unknown trigger metric {control.trigger_metric}")
            node.policies.append(_NodePolicy(control))
            return b"policy installed"
        if isinstance(control, OffsetPolicy):
            touched = 0
            for cell in node.cells.values():
                if control.parameter_name in cell.tunables:
                    cell.tunables[control.parameter_name] += control.delta
                    touched += 1
            if not touched:
                raise UnknownTarget(f"no tunable {control.parameter_name} on node {node_id}")
            return f"offset {control.parameter_name} += {control.delta}".encode()
        raise UnsupportedDomain(f"control verb {type(control).__name__} not supported")

    def _apply_handover(self, node: _NodeRt, cmd: HandoverCommand,
                        call_process_id: Optional[bytes]) -> bytes:
        ue = self.ues.get(cmd.ue_id)
        if ue is None:
            raise UnknownTarget(f"unknown ue {cmd.ue_id}")
        target = self.cell_by_global.get(cmd.target_cell_global_id)
        if target is None:
            raise UnknownTarget(f"unknown target cell {cmd.target_cell_global_id}")
        serving_gid = self._cell_of(ue).cfg.global_id
        if ue.pending is not None:
            if call_process_id is not None and call_process_id != ue.pending.call_process_id:
                raise UnknownTarget("stale call process id")
            ue.pending = None
            ue.holdoff_until = self.clock.now_ms + self.config.a3_holdoff_ms
            if cmd.target_cell_global_id == serving_gid:
                node.inserts_denied += 1
                return b"handover denied; resuming without handover"
            node.inserts_accepted += 1
            self._moves.append((cmd.ue_id, cmd.target_cell_global_id))
            return f"handover ue={cmd.ue_id} -> cell_gid={cmd.target_cell_global_id}".encode()
        if call_process_id is not None:
            raise UnknownTarget("stale call process id")
        if cmd.target_cell_global_id == serving_gid:
            return b"ue already served by target cell"
        self._moves.append((cmd.ue_id, cmd.target_cell_global_id))
        return f"handover ue={cmd.ue_id} -> cell_gid={cmd.target_cell_global_id}".encode()

    def send_service_update(self, node_id: str, update: ServiceUpdate) -> bytes:
        return e2codec.encode(E2apPdu.wrap(update))

    # --- the tick loop --------------------------------------------------------

    def step(self, n_ticks: int) -> None:
        for _ in range(n_ticks):
            self._tick()

    def _tick(self) -> None:
        now = self.clock.tick()
        self._execute_moves()
        for ue_id in sorted(self.ues):
            self._update_position(self.ues[ue_id], now)
        for node in self.nodes.values():
            node.d_handover = 0
            for cell in node.cells.values():
                for srt in cell.slices.values():
                    srt.reset_deltas()
        for ue in self.ues.values():
            ue.reset_deltas()
        for ue_id in sorted(self.ues):
            self._arrivals(self.ues[ue_id], now)
        for node_id in self.nodes:
            self._schedule_node(self.nodes[node_id])
        for node_id in self.nodes:
            self._run_policies(self.nodes[node_id], node_id)
        for node_id in self.nodes:
            self._check_triggers_node(self.nodes[node_id], now)
        self._accumulate_kpm()
        for node_id in self.nodes:
            self._kpm_reports(self.nodes[node_id], now)
        for node_id in self.nodes:
            self._o1_timers(self.nodes[node_id], now)

    def _execute_moves(self) -> None:
        for ue_id, target_gid in self._moves:
            ue = self.ues.get(ue_id)
            if ue is None:
                continue
            node_id, cell_id = self.cell_by_global[target_gid]
            target_cell = self.nodes[node_id].cells[cell_id]
            if ue.cfg.slice_id not in target_cell.slices:
                continue  # target does not host the slice; drop the move
            old_slice = self._slice_of(ue)
            old_slice.members.remove(ue_id)
            old_slice.migrated_out += ue.buffer
            self.nodes[ue.node_id].handover_count += 1
            self.nodes[ue.node_id].d_handover += 1
            ue.node_id, ue.cell_id = node_id, cell_id
            new_slice = self._slice_of(ue)
            new_slice.members.append(ue_id)
            new_slice.members.sort()
            new_slice.migrated_in += ue.buffer
        self._moves.clear()

    def _update_position(self, ue: _UeRt, now: int) -> None:
        path = ue.cfg.path
        if not path:
            return
        if now <= path[0][2]:
            ue.position = (path[0][0], path[0][1])
            return
        if now >= path[-1][2]:
            ue.position = (path[-1][0], path[-1][1])
            return
        for (x0, y0, t0), (x1, y1, t1) in zip(path, path[1:]):
            if t0 <= now <= t1:
                f = (now - t0) / (t1 - t0) if t1 > t0 else 1.0
                ue.position = (x0 + f * (x1 - x0), y0 + f * (y1 - y0))
                return

    def _arrivals(self, ue: _UeRt, now: int) -> None:
        spec = ue.cfg.traffic
        if now < spec.start_ms:
            return
        packets: list[int] = []
        if spec.kind == "constant":
            if spec.rate_bytes > 0:
                packets.append(spec.rate_bytes)
        elif spec.kind == "periodic":
            if spec.burst_bytes > 0 and spec.period_ms > 0 and now % spec.period_ms == 0:
                packets.append(spec.burst_bytes)
        elif spec.kind == "poisson":
            lam = spec.mean_bytes / max(spec.packet_bytes, 1)
            packets.extend([spec.packet_bytes] * _poisson(ue.rng, lam))
        else:
            raise InvariantViolation(f"unknown traffic kind {spec.kind!r}")
        if not packets:
            return
        total = sum(packets)
        ue.queue.extend(packets)
        ue.buffer += total
        ue.d_arrived += total
        srt = self._slice_of(ue)
        srt.arrived += total
        srt.d_arrived += total
        bpp = self.config.bytes_per_prb
        srt.d_prb_requested += -(-total // bpp)  # ceil

    def _schedule_node(self, node: _NodeRt) -> None:
        bpp = self.config.bytes_per_prb
        for cell_id in sorted(node.cells):
            cell = node.cells[cell_id]
            for slice_id in sorted(cell.slices):
                srt = cell.slices[slice_id]
                for _ in range(srt.dedicated_prb):
                    ue = self._pick_ue(srt)
                    if ue is None:
                        break
                    drained = self._serve(ue, bpp)
                    srt.served += drained
                    srt.d_served += drained
                    srt.d_prb_granted += 1
                    ue.d_prb += 1

    def _pick_ue(self, srt: _SliceRt) -> Optional[_UeRt]:
        members = srt.members
        live = [uid for uid in members if self.ues[uid].buffer > 0]
        if not live:
            return None
        if srt.scheduler == SliceScheduler.HIGHEST_BUFFER_FIRST:
            best = max(live, key=lambda uid: (self.ues[uid].buffer, -uid))
            return self.ues[best]
        # round robin over the member list, skipping empty buffers
        n = len(members)
        for offset in range(n):
            idx = (srt.rr_cursor + offset) % n
            uid = members[idx]
            if self.ues[uid].buffer > 0:
                srt.rr_cursor = (idx + 1) % n
                return self.ues[uid]
        return None

    def _serve(self, ue: _UeRt, budget: int) -> int:
        drained = 0
        srt = self._slice_of(ue)
        while budget > 0 and ue.queue:
            take = min(budget, ue.queue[0])
            ue.queue[0] -= take
            budget -= take
            drained += take
            if ue.queue[0] == 0:
                ue.queue.popleft()
                ue.d_packets += 1
                srt.packets_done += 1
                srt.d_packets += 1
        ue.buffer -= drained
        ue.d_served += drained
        return drained

    def _run_policies(self, node: _NodeRt, node_id: str) -> None:
        for entry in node.policies:
            policy = entry.policy
            value = self._policy_metric_value(node, policy)
            if value is None:
                continue
            holds = policy.comparator.holds(value, policy.threshold)
            if holds and entry.armed:
                entry.armed = False
                try:
                    self.apply_control(node_id, policy.action)
                except (InfeasibleQuota, UnknownTarget, UnsupportedDomain):
                    pass  # autonomous rules fail silently; next edge retries
            elif not holds:
                entry.armed = True

    def _policy_metric_value(self, node: _NodeRt, policy: ControlPolicy) -> Optional[float]:
        # evaluate at the scope of the nested action's target where it has
        # one, else node-wide
        target_cell = getattr(policy.action, "cell_id", None)
        target_slice = getattr(policy.action, "slice_id", None)
        total = 0.0
        for cell in node.cells.values():
            if target_cell is not None and cell.cfg.cell_id != target_cell:
                continue
            for srt in cell.slices.values():
                if target_slice is not None and srt.cfg.slice_id != target_slice:
                    continue
                total += self._slice_metric(srt, policy.trigger_metric)
        return total

    def _slice_metric(self, srt: _SliceRt, metric: str) -> float:
        if metric == "tx_bytes":
            return float(srt.d_served)
        if metric == "tx_packets":
            return float(srt.d_packets)
        if metric == "buffer_bytes":
            return float(sum(self.ues[uid].buffer for uid in srt.members))
        if metric == "prb_granted":
            return float(srt.d_prb_granted)
        if metric == "prb_requested":
            return float(srt.d_prb_requested)
        if metric == "latency_proxy_ms":
            buf = sum(self.ues[uid].buffer for uid in srt.members)
            if buf == 0:
                return 0.0
            if srt.d_served == 0:
                return LATENCY_CLAMP_MS
            return min(buf / (srt.d_served / self.clock.tick_ms), LATENCY_CLAMP_MS)
        return 0.0

    # --- A3 triggers -------------------------------------------------------------

    def _check_triggers_node(self, node: _NodeRt, now: int) -> None:
        for ue_id in sorted(self.ues):
            ue = self.ues[ue_id]
            if ue.node_id != node.cfg.node_id:
                continue
            if ue.pending is not None:
                if now >= ue.pending.deadline_ms:
                    self._insert_timeout(node, ue)
                continue
            if now < ue.holdoff_until:
                continue
            best = self._best_neighbor(ue)
            if best is None:
                continue
            serving_cell = self._cell_of(ue)
            serving_rsrp = self.rsrp(serving_cell.cfg, ue.position)
            target_cfg, target_rsrp = best
            offset = serving_cell.tunables.get("a3_offset_db", DEFAULT_A3_OFFSET_DB)
            if target_rsrp >= serving_rsrp + offset:
                if node.insert_sub is not None:
                    self._emit_insert(node, ue, serving_cell.cfg, target_cfg,
                                      serving_rsrp, target_rsrp, now)
                else:
                    # no insert subscription: autonomous handover
                    self._moves.append((ue_id, target_cfg.global_id))
                    ue.holdoff_until = now + self.config.a3_holdoff_ms

    def _best_neighbor(self, ue: _UeRt) -> Optional[tuple[CellConfig, float]]:
        serving_gid = self._cell_of(ue).cfg.global_id
        best: Optional[tuple[CellConfig, float]] = None
        for gid in sorted(self.cell_by_global):
            if gid == serving_gid:
                continue
            node_id, cell_id = self.cell_by_global[gid]
            cell = self.nodes[node_id].cells[cell_id]
            if ue.cfg.slice_id not in cell.slices:
                continue
            level = self.rsrp(cell.cfg, ue.position)
            if best is None or level > best[1]:
                best = (cell.cfg, level)
        return best

    def _emit_insert(self, node: _NodeRt, ue: _UeRt, serving: CellConfig,
                     target: CellConfig, serving_rsrp: float, target_rsrp: float,
                     now: int) -> None:
        sub = node.insert_sub
        node.call_process_counter += 1
        cpid = node.call_process_counter.to_bytes(8, "big")
        insert = HandoverInsert(ue.cfg.ue_id, serving.cell_id, target.cell_id,
                                serving_rsrp, target_rsrp, cpid)
        pdu = E2apPdu.wrap(Indication(
            request_id=sub.request_id,
            function_id=RC_FUNCTION_ID,
            action_id=sub.action_id,
            indication_type=IndicationType.INSERT,
            header=encode_payload(RcEventTrigger("a3_rsrp")),
            message=encode_payload(insert),
            call_process_id=cpid,
        ))
        self.outbox.append((node.cfg.node_id, e2codec.encode(pdu)))
        ue.pending = _PendingInsert(cpid, ue.cfg.ue_id, serving.global_id,
                                    target.global_id, now + sub.wait_ms)
        node.inserts_emitted += 1

    def _insert_timeout(self, node: _NodeRt, ue: _UeRt) -> None:
        pending = ue.pending
        ue.pending = None
        ue.holdoff_until = self.clock.now_ms + self.config.a3_holdoff_ms
        node.inserts_timeout += 1
        if self.config.insert_timeout_executes:
            self._moves.append((ue.cfg.ue_id, pending.candidate_global_id))

    # --- KPM ---------------------------------------------------------------------

    def _sub_units(self, node: _NodeRt, defn: KpmActionDefinition) -> list[Scope]:
        kind = defn.node_kind
        if kind in (NodeKind.CU_UP, NodeKind.CU_CP):
            return [Scope.node()]
        scope = defn.scope
        if scope.kind == ScopeKind.UE:
            return [scope]
        units = []
        for cell_id in sorted(node.cells):
            if scope.kind in (ScopeKind.CELL, ScopeKind.SLICE) and cell_id != scope.cell_id:
                continue
            for slice_id in sorted(node.cells[cell_id].slices):
                if scope.kind == ScopeKind.SLICE and slice_id != scope.slice_id:
                    continue
                units.append(Scope.slice_(cell_id, slice_id))
        return units

    def _accumulate_kpm(self) -> None:
        for node in self.nodes.values():
            for key in sorted(node.kpm_subs):
                for sub in node.kpm_subs[key]:
                    for unit in self._sub_units(node, sub.action_def):
                        sums = sub.sums.setdefault(self._unit_key(unit), {})
                        # window service rate, kept for the latency gauge
                        served = self._metric_delta(node, NodeKind.DU, unit, "tx_bytes") \
                            if sub.action_def.node_kind == NodeKind.DU else 0.0
                        sums["__served"] = sums.get("__served", 0.0) + (served or 0.0)
                        for metric in sub.action_def.metrics:
                            delta = self._metric_delta(
                                node, sub.action_def.node_kind, unit, metric)
                            if delta is not None:
                                sums[metric] = sums.get(metric, 0.0) + delta

    @staticmethod
    def _unit_key(unit: Scope) -> tuple:
        return (int(unit.kind), unit.cell_id, unit.slice_id, unit.ue_id)

    def _metric_delta(self, node: _NodeRt, kind: NodeKind, unit: Scope,
                      metric: str) -> Optional[float]:
        """Per-tick increment for summable metrics; None for gauges."""
        if kind == NodeKind.DU:
            if unit.kind == ScopeKind.UE:
                ue = self.ues.get(unit.ue_id)
                if ue is None or ue.node_id != node.cfg.node_id:
                    return 0.0
                return {
                    "tx_bytes": float(ue.d_served),
                    "tx_packets": float(ue.d_packets),
                    "prb_granted": float(ue.d_prb),
                    "prb_requested": float(-(-ue.d_arrived // self.config.bytes_per_prb)),
                }.get(metric)
            srt = node.cells[unit.cell_id].slices[unit.slice_id]
            return {
                "tx_bytes": float(srt.d_served),
                "tx_packets": float(srt.d_packets),
                "prb_granted": float(srt.d_prb_granted),
                "prb_requested": float(srt.d_prb_requested),
            }.get(metric)
        if kind == NodeKind.CU_UP:
            if metric == "pdcp_tx_bytes":
                return float(sum(s.d_served for c in node.cells.values()
                                 for s in c.slices.values()))
            return None
        if kind == NodeKind.CU_CP:
            if metric == "handover_count":
                return float(node.d_handover)
            return None
        return None

    def _metric_gauge(self, node: _NodeRt, kind: NodeKind, unit: Scope,
                      metric: str, window_served: float, window_ms: int) -> float:
        if kind == NodeKind.DU:
            if unit.kind == ScopeKind.UE:
                ue = self.ues.get(unit.ue_id)
                buf = float(ue.buffer) if ue is not None else 0.0
            else:
                srt = node.cells[unit.cell_id].slices[unit.slice_id]
                buf = float(sum(self.ues[uid].buffer for uid in srt.members))
            if metric == "buffer_bytes":
                return buf
            if metric == "latency_proxy_ms":
                if buf == 0.0:
                    return 0.0
                rate = window_served / window_ms  # bytes per ms
                if rate == 0.0:
                    return LATENCY_CLAMP_MS
                return min(buf / rate, LATENCY_CLAMP_MS)
        if kind == NodeKind.CU_UP and metric == "pdcp_queue_bytes":
            return float(sum(self.ues[uid].buffer for c in node.cells.values()
                             for s in c.slices.values() for uid in s.members))
        if kind == NodeKind.CU_CP and metric == "connected_ues":
            return float(sum(len(s.members) for c in node.cells.values()
                             for s in c.slices.values()))
        return 0.0

    _GAUGES = {"buffer_bytes", "latency_proxy_ms", "pdcp_queue_bytes", "connected_ues"}

    def _kpm_reports(self, node: _NodeRt, now: int) -> None:
        for key in sorted(node.kpm_subs):
            for sub in node.kpm_subs[key]:
                if now < sub.next_report:
                    continue
                records = []
                for unit in self._sub_units(node, sub.action_def):
                    sums = sub.sums.get(self._unit_key(unit), {})
                    for metric in sub.action_def.metrics:
                        if metric in self._GAUGES:
                            value = self._metric_gauge(
                                node, sub.action_def.node_kind, unit, metric,
                                sums.get("__served", 0.0), sub.period_ms)
                        else:
                            value = sums.get(metric, 0.0)
                        records.append(KpmRecord(metric, unit, now, value))
                sub.seq += 1
                pdu = E2apPdu.wrap(Indication(
                    request_id=sub.request_id,
                    function_id=KPM_FUNCTION_ID,
                    action_id=sub.action_id,
                    indication_type=IndicationType.REPORT,
                    sequence_number=sub.seq,
                    header=encode_payload(KpmIndicationHeader(node.cfg.node_id, sub.window_start)),
                    message=encode_payload(KpmMeasurements(tuple(records))),
                ))
                self.outbox.append((node.cfg.node_id, e2codec.encode(pdu)))
                sub.sums.clear()
                sub.window_start = now
                sub.next_report += sub.period_ms

    # --- O1 ------------------------------------------------------------------------

    def _o1_timers(self, node: _NodeRt, now: int) -> None:
        hb = self.config.heartbeat_period_ms
        if hb > 0 and now >= node.next_heartbeat + hb:
            node.next_heartbeat = now
            self.o1_events.append({"kind": "heartbeat", "node": node.cfg.node_id, "at_ms": now})
        pm = self.config.pm_interval_ms
        # accumulate this tick into the PM interval
        for cell_id in sorted(node.cells):
            for slice_id in sorted(node.cells[cell_id].slices):
                srt = node.cells[cell_id].slices[slice_id]
                acc = node.pm_accum.setdefault((cell_id, slice_id), {})
                acc["tx_bytes"] = acc.get("tx_bytes", 0.0) + srt.d_served
                acc["tx_packets"] = acc.get("tx_packets", 0.0) + srt.d_packets
                acc["prb_granted"] = acc.get("prb_granted", 0.0) + srt.d_prb_granted
                acc["prb_requested"] = acc.get("prb_requested", 0.0) + srt.d_prb_requested
        if pm > 0 and now >= (node.pm_interval_index + 1) * pm:
            node.pm_interval_index += 1
            rows = [PM_COLUMNS]
            for (cell_id, slice_id) in sorted(node.pm_accum):
                acc = node.pm_accum[(cell_id, slice_id)]
                srt = node.cells[cell_id].slices[slice_id]
                buf = float(sum(self.ues[uid].buffer for uid in srt.members))
                served = acc.get("tx_bytes", 0.0)
                if buf == 0.0:
                    latency = 0.0
                elif served == 0.0:
                    latency = LATENCY_CLAMP_MS
                else:
                    latency = min(buf / (served / pm), LATENCY_CLAMP_MS)
                values = [
                    ("tx_bytes", acc.get("tx_bytes", 0.0)),
                    ("tx_packets", acc.get("tx_packets", 0.0)),
                    ("buffer_bytes", buf),
                    ("latency_proxy_ms", latency),
                    ("prb_granted", acc.get("prb_granted", 0.0)),
                    ("prb_requested", acc.get("prb_requested", 0.0)),
                ]
                for metric, value in values:
                    rows.append(f"{now},{node.cfg.node_id},{cell_id},{slice_id},{metric},{value:g}")
            blob = ("\n".join(rows) + "\n").encode()
            node.pm_blobs[node.pm_interval_index] = blob
            node.pm_accum.clear()
            self.o1_events.append({
                "kind": "pm_file_ready", "node": node.cfg.node_id,
                "interval": node.pm_interval_index, "at_ms": now})

    def fetch_pm_blob(self, node_id: str, interval: int) -> Optional[bytes]:
        return self.nodes[node_id].pm_blobs.get(interval)

    # --- introspection ----------------------------------------------------------

    def drain_outbox(self) -> list[tuple[str, bytes]]:
        out, self.outbox = self.outbox, []
        return out

    def drain_o1_events(self) -> list[dict]:
        out, self.o1_events = self.o1_events, []
        return out

    def counters(self, node_id: str) -> dict:
        node = self.nodes[node_id]
        return {
            "inserts_emitted": node.inserts_emitted,
            "inserts_accepted": node.inserts_accepted,
            "inserts_denied": node.inserts_denied,
            "inserts_timeout": node.inserts_timeout,
            "handover_count": node.handover_count,
        }

    def state_hash(self) -> str:
        """SHA-256 over the canonical full state; pure function of
        (scenario, seed, tick count)."""
        h = hashlib.sha256()
        h.update(f"t={self.clock.now_ms};".encode())
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            h.update(f"node={node_id};ho={node.handover_count};"
                     f"ins={node.inserts_emitted},{node.inserts_accepted},"
                     f"{node.inserts_denied},{node.inserts_timeout};".encode())
            for cell_id in sorted(node.cells):
                cell = node.cells[cell_id]
                h.update(f"cell={cell_id};".encode())
                for k in sorted(cell.tunables):
                    h.update(f"{k}={cell.tunables[k]!r};".encode())
                for slice_id in sorted(cell.slices):
                    srt = cell.slices[slice_id]
                    h.update(
                        f"slice={slice_id};prb={srt.dedicated_prb};"
                        f"sched={int(srt.scheduler)};rr={srt.rr_cursor};"
                        f"arr={srt.arrived};srv={srt.served};pkt={srt.packets_done};"
                        f"mi={srt.migrated_in};mo={srt.migrated_out};"
                        f"members={srt.members};".encode())
        for ue_id in sorted(self.ues):
            ue = self.ues[ue_id]
            pend = None
            if ue.pending is not None:
                pend = (ue.pending.call_process_id.hex(), ue.pending.deadline_ms,
                        ue.pending.candidate_global_id)
            h.update(
                f"ue={ue_id};cell={ue.cell_id};pos={ue.position!r};"
                f"buf={ue.buffer};q={list(ue.queue)};hold={ue.holdoff_until};"
                f"pend={pend};".encode())
            h.update(repr(ue.rng.getstate()).encode())
        return h.hexdigest()
