"""Near-RT RIC platform.

Hosts the E2 and A1 terminations, the subscription manager (with merging
of identical subscriptions into one wire subscription), direct-conflict
mitigation with a guard-window lock table, post-action verification, the
R-NIB/UE-NIB behind the SDL, the data-access topics for chained models,
and xApp lifecycle management.

The platform is transport-agnostic: the harness hands it per-node links
(objects with send()/request()) and drives time through advance_to().
Everything it does is deterministic given the message arrival order: xApp
timer callbacks fire in descending descriptor priority (ties broken by
name), insert deadlines in (deadline, call-process-id) order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from . import e2codec
from .e2codec import (
    ControlAcknowledge, ControlFailure, ControlRequest, E2apPdu, Indication,
    IndicationType, RanFunction, RicAction, RicRequestId, ServiceUpdate,
    ServiceUpdateAck, SetupRequest, SetupResponse, SubscriptionDeleteRequest,
    SubscriptionFailure, SubscriptionRequest, SubscriptionResponse,
    TimeToWait,
)
from .e2sm import (
    CellInfo, HandoverCommand, HandoverInsert, KpmActionDefinition,
    KpmEventTrigger, KpmIndication, KpmIndicationHeader, KpmMeasurements,
    ModelId, RcActionDefinition, RcControl, RcDomain, RcEventTrigger,
    RcFunctionDefinition, ScopeKind, SlicePrbQuota, encode_payload,
    rc_domain, sm_decode,
)
from .errors import (
    ConflictRejected, DuplicateName, MalformedPayload, MalformedPolicy,
    NotOnboarded, UndeclaredTopic, UnknownFunction, UnknownNode,
    UnknownPolicyType, UnknownServiceModel, UnsupportedDomain, WireRejected,
)
from .sdl import PLATFORM, Sdl

SLICING_POLICY_TYPE = 20008
POLICY_TOPIC = "policies"

_VALID_SCOPE_KEYS = {"ue", "ue_group", "slice", "cell", "qos_class"}
_METRIC_POLARITY = {  # +1: higher is better, -1: lower is better
    "tx_bytes": 1, "tx_packets": 1, "prb_granted": 1,
    "latency_proxy_ms": -1, "buffer_bytes": -1,
}
_OBJECTIVE_METRIC = {"urllc": "latency_proxy_ms", "embb": "tx_bytes", "mmtc": "tx_packets"}


@dataclass(frozen=True)
class XappDescriptor:
    """Deployment descriptor: identity, conflict priority, data topics
    consumed/produced, RC control capabilities, and loop parameters."""

    name: str
    version: str = "1.0"
    priority: int = 0
    consumed_data: tuple[str, ...] = ()
    produced_data: tuple[str, ...] = ()
    control_capabilities: tuple[RcDomain, ...] = ()
    loop_period_ms: int = 100
    model_path: str = ""
    params: dict[str, Any] = field(default_factory=dict)

    @staticmethod
    def from_kv_text(text: str) -> "XappDescriptor":
        """Parse the key-value descriptor file format (one `key: value` per
        line, comma-separated lists, `#` comments)."""
        fields: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise MalformedPolicy(f"descriptor line {lineno}: expected 'key: value'")
            key, value = line.split(":", 1)
            fields[key.strip()] = value.strip()
        return XappDescriptor.from_dict(fields)

    @staticmethod
    def from_dict(raw: dict) -> "XappDescriptor":
        def as_list(v) -> tuple[str, ...]:
            if isinstance(v, str):
                return tuple(p.strip() for p in v.split(",") if p.strip())
            return tuple(v or ())

        caps = tuple(RcDomain[c.strip().upper()] for c in as_list(raw.get("control_capabilities", ())))
        known = {"name", "version", "priority", "consumed_data", "produced_data",
                 "control_capabilities", "loop_period_ms", "model_path"}
        params = {k: v for k, v in raw.items() if k not in known}
        return XappDescriptor(
            name=raw["name"],
            version=str(raw.get("version", "1.0")),
            priority=int(raw.get("priority", 0)),
            consumed_data=as_list(raw.get("consumed_data", ())),
            produced_data=as_list(raw.get("produced_data", ())),
            control_capabilities=caps,
            loop_period_ms=int(raw.get("loop_period_ms", 100)),
            model_path=str(raw.get("model_path", "") or ""),
            params=params,
        )


@dataclass
class RnibEntry:
    node_id: str
    node_kind: str = "du"
    functions: dict[int, RanFunction] = field(default_factory=dict)
    connected: bool = True
    last_seen_ms: int = 0
    cells: dict[int, CellInfo] = field(default_factory=dict)


@dataclass
class UeNibEntry:
    ue_id: int
    contexts: list[tuple[str, int, Optional[str]]] = field(default_factory=list)


@dataclass(frozen=True)
class SubscriptionKey:
    node_id: str
    function_id: int
    trigger: bytes
    actions: tuple  # canonicalized action tuples, sorted by action id


def canonical_actions(actions: tuple[RicAction, ...]) -> tuple:
    items = []
    for a in sorted(actions, key=lambda a: a.action_id):
        subsequent = None
        if a.subsequent is not None:
            subsequent = (int(a.subsequent.kind), int(a.subsequent.time_to_wait))
        items.append((a.action_id, int(a.action_type), a.definition, subsequent))
    return tuple(items)


@dataclass
class SubscriptionRecord:
    key: SubscriptionKey
    request_id: RicRequestId
    actions: tuple[RicAction, ...]
    subscribers: list[str] = field(default_factory=list)
    admitted_action_ids: tuple[int, ...] = ()
    active: bool = True


@dataclass
class InsertPending:
    call_process_id: bytes
    node_id: str
    xapp: str
    insert: HandoverInsert
    received_ms: int
    deadline_ms: int


@dataclass
class VerdictRecord:
    control_ref: str
    node_id: str
    cell_id: int
    slice_id: str
    metric: str
    verdict: str  # improved | degraded | neutral | insufficient_data
    before_mean: float
    after_mean: float
    at_ms: int


@dataclass(frozen=True)
class ControlResult:
    status: str  # acknowledged | denied | timeout
    outcome: bytes = b""
    cause: str = ""


@dataclass(frozen=True)
class IndicationEvent:
    """What an xApp's on_indication receives."""

    node_id: str
    handle: SubscriptionKey
    indication: Indication
    kpm: Optional[KpmIndication] = None
    insert: Optional[HandoverInsert] = None


@dataclass(frozen=True)
class RicConfig:
    requestor_id: int = 1
    conflict_window_ms: int = 1000
    verify_window_ms: int = 2000
    verify_min_samples: int = 3
    verify_threshold: float = 0.05
    kpm_history_keep_ms: int = 10_000


class _XappRuntime:
    def __init__(self, descriptor: XappDescriptor, instance, sdk: "XappSdk"):
        self.descriptor = descriptor
        self.instance = instance
        self.sdk = sdk
        self.next_tick_ms = descriptor.loop_period_ms

    def order_key(self) -> tuple:
        return (-self.descriptor.priority, self.descriptor.name)


class NearRtRic:
    def __init__(self, config: RicConfig = RicConfig()):
        self.config = config
        self.now_ms = 0
        self.sdl = Sdl()
        self.rnib: dict[str, RnibEntry] = {}
        self.uenib: dict[int, UeNibEntry] = {}
        self.links: dict[str, Any] = {}  # node_id -> link with send()/request()
        self.onboarded: dict[str, XappDescriptor] = {}
        self.deployed: dict[str, _XappRuntime] = {}
        self.factories: dict[str, Callable[[XappDescriptor], Any]] = {}
        self.records: dict[SubscriptionKey, SubscriptionRecord] = {}
        self.by_request: dict[tuple[int, int], SubscriptionRecord] = {}
        self._instance_counter = 0
        self.locks: dict[tuple, tuple[str, int]] = {}  # target -> (holder, expiry)
        self.pending_inserts: dict[bytes, InsertPending] = {}
        self.verify_tasks: list[tuple[int, int, dict]] = []  # (due, seq, task)
        self._verify_seq = 0
        self.kpm_history: dict[tuple, list[tuple[int, float]]] = {}
        self.policies: dict[str, dict] = {}
        self.topic_epochs: dict[str, int] = {}
        self.a1_out: list[bytes] = []
        self.verdicts: list[VerdictRecord] = []
        self.counters: dict[str, int] = {
            "orphan_indications": 0, "invalid_indications": 0,
            "inserts_received": 0, "insert_replied_accept": 0,
            "insert_replied_deny": 0, "insert_timeout": 0,
            "conflict_rejections": 0, "controls_acknowledged": 0,
            "controls_denied": 0, "wire_subscription_requests": 0,
            "wire_subscription_deletes": 0, "report_deliveries": 0,
        }
        self.wire_out: dict[str, int] = {}
        self.wire_in: dict[str, int] = {}

    # --- plumbing ---------------------------------------------------------------

    def register_factory(self, name: str, factory: Callable[[XappDescriptor], Any]) -> None:
        self.factories[name] = factory

    def attach_link(self, conn_id: str, link) -> None:
        self.links[conn_id] = link

    def _count(self, table: dict[str, int], body) -> None:
        name = type(body).__name__
        table[name] = table.get(name, 0) + 1

    def _send(self, node_id: str, pdu: E2apPdu) -> None:
        self._count(self.wire_out, pdu.body)
        self.links[node_id].send(e2codec.encode(pdu))

    def _request(self, node_id: str, pdu: E2apPdu) -> E2apPdu:
        link = self.links.get(node_id)
        if link is None:
            raise UnknownNode(f"no link to node {node_id}")
        self._count(self.wire_out, pdu.body)
        raw = link.request(e2codec.encode(pdu))
        resp = e2codec.decode(raw)
        self._count(self.wire_in, resp.body)
        return resp

    def _next_request_id(self) -> RicRequestId:
        self._instance_counter += 1
        return RicRequestId(self.config.requestor_id, self._instance_counter)

    # --- E2 ingress ---------------------------------------------------------------

    def deliver_e2(self, conn_id: str, data: bytes) -> None:
        """Process one node-initiated E2 frame arriving on a connection."""
        pdu = e2codec.decode(data)
        self._count(self.wire_in, pdu.body)
        body = pdu.body
        if isinstance(body, SetupRequest):
            self.handle_setup(conn_id, body)
        elif isinstance(body, ServiceUpdate):
            try:
                self.handle_service_update(conn_id, body)
            except UnknownNode as exc:
                link = self.links.get(conn_id)
                if link is not None:
                    reply = E2apPdu.wrap(e2codec.ErrorIndication(
                        e2codec.Cause(e2codec.CauseKind.REJECTED, str(exc))))
                    self._count(self.wire_out, reply.body)
                    link.send(e2codec.encode(reply))
        elif isinstance(body, Indication):
            self.route_indication(conn_id, body)
        # ErrorIndication and stray outcomes are counted but not routed

    def handle_setup(self, conn_id: str, req: SetupRequest) -> None:
        accepted, rejected, functions = [], [], {}
        cells: dict[int, CellInfo] = {}
        for fn in req.functions:
            try:
                _, defn = sm_decode(fn.definition)
            except (MalformedPayload, UnknownServiceModel):
                rejected.append(fn.function_id)
                continue
            accepted.append(fn.function_id)
            functions[fn.function_id] = fn
            if isinstance(defn, RcFunctionDefinition):
                for cell in defn.cells:
                    cells[cell.cell_id] = cell
        if req.node_id in self.rnib:
            # replaced registration cancels everything the old one carried
            self._teardown_node_records(req.node_id, notify=True)
        self.rnib[req.node_id] = RnibEntry(
            node_id=req.node_id, functions=functions, connected=True,
            last_seen_ms=self.now_ms, cells=cells)
        self.links.setdefault(req.node_id, self.links.get(conn_id))
        if conn_id != req.node_id and conn_id in self.links:
            self.links[req.node_id] = self.links[conn_id]
        self._mirror_rnib(req.node_id)
        self._send(req.node_id, E2apPdu.wrap(
            SetupResponse(tuple(accepted), tuple(rejected))))

    def handle_service_update(self, conn_id: str, update: ServiceUpdate) -> None:
        node_id = conn_id
        entry = self.rnib.get(node_id)
        if entry is None:
            raise UnknownNode(f"service update from unregistered node {node_id}")
        accepted, rejected = [], []
        for fn in list(update.added) + list(update.modified):
            try:
                sm_decode(fn.definition)
            except (MalformedPayload, UnknownServiceModel):
                rejected.append(fn.function_id)
                continue
            entry.functions[fn.function_id] = fn
            accepted.append(fn.function_id)
        for fid in update.deleted_ids:
            entry.functions.pop(fid, None)
            accepted.append(fid)
            for record in [r for r in self.records.values()
                           if r.active and r.key.node_id == node_id
                           and r.key.function_id == fid]:
                self._end_record(record, reason="function deleted", wire_delete=False)
        entry.last_seen_ms = self.now_ms
        self._mirror_rnib(node_id)
        self._send(node_id, E2apPdu.wrap(
            ServiceUpdateAck(tuple(accepted), tuple(rejected))))

    def _teardown_node_records(self, node_id: str, notify: bool) -> None:
        for record in [r for r in self.records.values()
                       if r.active and r.key.node_id == node_id]:
            self._end_record(record, reason="node re-registered", wire_delete=False)

    def _end_record(self, record: SubscriptionRecord, reason: str,
                    wire_delete: bool) -> None:
        record.active = False
        self.by_request.pop(
            (record.request_id.requestor_id, record.request_id.instance_id), None)
        self.records.pop(record.key, None)
        if wire_delete:
            self.counters["wire_subscription_deletes"] += 1
            self._request(record.key.node_id, E2apPdu.wrap(
                SubscriptionDeleteRequest(record.request_id, record.key.function_id)))
        for name in list(record.subscribers):
            runtime = self.deployed.get(name)
            if runtime is not None and hasattr(runtime.instance, "on_subscription_ended"):
                runtime.instance.on_subscription_ended(record.key, reason)

    def _mirror_rnib(self, node_id: str) -> None:
        entry = self.rnib[node_id]
        self.sdl.put("rnib", node_id, {
            "node_id": node_id,
            "node_kind": entry.node_kind,
            "functions": sorted(entry.functions),
            "connected": entry.connected,
            "last_seen_ms": entry.last_seen_ms,
            "cells": {c.cell_id: {"global_id": c.global_id, "total_prb": c.total_prb,
                                  "slices": list(c.slice_ids)}
                      for c in entry.cells.values()},
        }, writer=PLATFORM)

    # --- subscription manager -------------------------------------------------------

    def xapp_subscribe(self, xapp: str, node_id: str, function_id: int,
                       trigger: bytes, actions: tuple[RicAction, ...]) -> SubscriptionKey:
        if xapp not in self.deployed:
            raise NotOnboarded(f"xapp {xapp} is not deployed")
        entry = self.rnib.get(node_id)
        if entry is None:
            raise UnknownNode(f"node {node_id} not in R-NIB")
        if function_id not in entry.functions:
            raise UnknownFunction(f"node {node_id} exposes no function {function_id}")
        key = SubscriptionKey(node_id, function_id, trigger, canonical_actions(actions))
        record = self.records.get(key)
        if record is not None and record.active:
            if xapp not in record.subscribers:
                record.subscribers.append(xapp)
            return key
        request_id = self._next_request_id()
        self.counters["wire_subscription_requests"] += 1
        resp = self._request(node_id, E2apPdu.wrap(
            SubscriptionRequest(request_id, function_id, trigger, actions)))
        if isinstance(resp.body, SubscriptionFailure):
            raise WireRejected(resp.body.cause.text or resp.body.cause.kind.name)
        if not isinstance(resp.body, SubscriptionResponse):
            raise WireRejected(f"unexpected response {type(resp.body).__name__}")
        record = SubscriptionRecord(
            key=key, request_id=request_id, actions=actions, subscribers=[xapp],
            admitted_action_ids=tuple(resp.body.admitted_action_ids))
        self.records[key] = record
        self.by_request[(request_id.requestor_id, request_id.instance_id)] = record
        return key

    def xapp_unsubscribe(self, xapp: str, key: SubscriptionKey) -> None:
        record = self.records.get(key)
        if record is None or not record.active:
            return
        if xapp in record.subscribers:
            record.subscribers.remove(xapp)
        if not record.subscribers:
            self._end_record(record, reason="last subscriber left", wire_delete=True)

    def wire_subscription_count(self) -> int:
        return sum(1 for r in self.records.values() if r.active)

    # --- indication routing -----------------------------------------------------------

    def route_indication(self, conn_id: str, ind: Indication) -> None:
        record = self.by_request.get(
            (ind.request_id.requestor_id, ind.request_id.instance_id))
        if record is None or not record.active:
            self.counters["orphan_indications"] += 1
            return
        node_id = record.key.node_id
        kpm = insert = None
        if ind.indication_type == IndicationType.REPORT:
            kpm = self._decode_kpm(record, ind)
            if kpm is None and record.key.function_id == 1:
                return  # counted as invalid
            event = IndicationEvent(node_id, record.key, ind, kpm=kpm)
            for name in list(record.subscribers):
                runtime = self.deployed.get(name)
                if runtime is not None:
                    self.counters["report_deliveries"] += 1
                    runtime.instance.on_indication(event)
            return
        # insert: deliver to the first registered control-capable subscriber
        self.counters["inserts_received"] += 1
        try:
            _, payload = sm_decode(ind.message)
        except (MalformedPayload, UnknownServiceModel):
            self.counters["invalid_indications"] += 1
            return
        if not isinstance(payload, HandoverInsert):
            self.counters["invalid_indications"] += 1
            return
        insert = payload
        self._touch_uenib(insert.ue_id, node_id, insert.serving_cell_id)
        target_xapp = None
        for name in record.subscribers:
            runtime = self.deployed.get(name)
            if runtime is not None and runtime.descriptor.control_capabilities:
                target_xapp = name
                break
        if target_xapp is None:
            self.counters["orphan_indications"] += 1
            return
        wait_ms = self._action_wait_ms(record, ind.action_id)
        self.pending_inserts[insert.call_process_id] = InsertPending(
            call_process_id=insert.call_process_id, node_id=node_id,
            xapp=target_xapp, insert=insert, received_ms=self.now_ms,
            deadline_ms=self.now_ms + wait_ms)
        event = IndicationEvent(node_id, record.key, ind, insert=insert)
        self.deployed[target_xapp].instance.on_indication(event)

    def _decode_kpm(self, record: SubscriptionRecord, ind: Indication) -> Optional[KpmIndication]:
        if record.key.function_id != 1:
            return None
        try:
            _, header = sm_decode(ind.header)
            _, measurements = sm_decode(ind.message)
        except (MalformedPayload, UnknownServiceModel):
            self.counters["invalid_indications"] += 1
            return None
        if not isinstance(header, KpmIndicationHeader) or \
                not isinstance(measurements, KpmMeasurements):
            self.counters["invalid_indications"] += 1
            return None
        requested = self._action_metrics(record, ind.action_id)
        if requested is not None:
            for rec in measurements.records:
                if rec.metric not in requested:
                    self.counters["invalid_indications"] += 1
                    return None
        for rec in measurements.records:
            if rec.scope.kind == ScopeKind.SLICE:
                hkey = (record.key.node_id, rec.scope.cell_id,
                        rec.scope.slice_id, rec.metric)
                series = self.kpm_history.setdefault(hkey, [])
                series.append((rec.timestamp_ms, rec.value))
                cutoff = self.now_ms - self.config.kpm_history_keep_ms
                while series and series[0][0] < cutoff:
                    series.pop(0)
        return KpmIndication(header, measurements.records)

    def _action_metrics(self, record: SubscriptionRecord, action_id: int):
        for action in record.actions:
            if action.action_id == action_id:
                try:
                    _, defn = sm_decode(action.definition)
                except (MalformedPayload, UnknownServiceModel):
                    return None
                if isinstance(defn, KpmActionDefinition):
                    return set(defn.metrics)
        return None

    def _action_wait_ms(self, record: SubscriptionRecord, action_id: int) -> int:
        for action in record.actions:
            if action.action_id == action_id and action.subsequent is not None:
                return action.subsequent.time_to_wait.millis
        return TimeToWait.W10MS.millis

    def _touch_uenib(self, ue_id: int, node_id: str, cell_id: int,
                     slice_id: Optional[str] = None) -> None:
        entry = self.uenib.setdefault(ue_id, UeNibEntry(ue_id))
        entry.contexts = [c for c in entry.contexts if c[0] != node_id]
        entry.contexts.append((node_id, cell_id, slice_id))
        self.sdl.put("uenib", str(ue_id),
                     {"ue_id": ue_id, "contexts": list(entry.contexts)},
                     writer=PLATFORM)

    # --- conflict mitigation -----------------------------------------------------------

    @staticmethod
    def control_target_key(node_id: str, control: RcControl) -> tuple:
        cell = getattr(control, "cell_id", None)
        slice_id = getattr(control, "slice_id", None)
        if isinstance(control, SlicePrbQuota):
            parameter = "dedicated_prb"
        elif isinstance(control, HandoverCommand):
            parameter = f"handover:{control.ue_id}"
        else:
            parameter = type(control).__name__.lower()
            name = getattr(control, "parameter_name", None)
            if name:
                parameter = f"{parameter}:{name}"
        return (node_id, cell if cell is not None else "*",
                slice_id if slice_id is not None else "*", parameter)

    def conflict_check(self, xapp: str, target: tuple) -> None:
        """Acquire the control lock for the guard window or raise
        ConflictRejected. Re-acquisition by the holder refreshes the window;
        a held, unexpired lock rejects everyone else regardless of
        priority (no mid-window preemption)."""
        held = self.locks.get(target)
        if held is not None:
            holder, expiry = held
            if holder != xapp and self.now_ms < expiry:
                self.counters["conflict_rejections"] += 1
                raise ConflictRejected(
                    f"target {target} held by {holder} until {expiry} ms", holder)
        self.locks[target] = (xapp, self.now_ms + self.config.conflict_window_ms)

    # --- control ------------------------------------------------------------------------

    def submit_control(self, xapp: str, node_id: str, control: RcControl,
                       in_reply_to: Optional[bytes] = None,
                       ack_requested: bool = True) -> ControlResult:
        runtime = self.deployed.get(xapp)
        if runtime is None:
            raise NotOnboarded(f"xapp {xapp} is not deployed")
        domain = rc_domain(control)
        if domain not in runtime.descriptor.control_capabilities:
            raise UnsupportedDomain(
                f"{xapp} does not declare the {domain.name.lower()} capability")
        if node_id not in self.rnib:
            raise UnknownNode(f"node {node_id} not in R-NIB")
        self.conflict_check(xapp, self.control_target_key(node_id, control))
        request_id = self._next_request_id()
        pdu = E2apPdu.wrap(ControlRequest(
            request_id=request_id, function_id=2, header=b"",
            message=encode_payload(control), call_process_id=in_reply_to,
            ack_requested=ack_requested))
        resp = self._request(node_id, pdu)
        if isinstance(resp.body, ControlAcknowledge):
            self.counters["controls_acknowledged"] += 1
            if in_reply_to is not None:
                self._resolve_insert(in_reply_to, node_id, control)
            self._schedule_verify(xapp, node_id, control)
            return ControlResult("acknowledged", outcome=resp.body.outcome)
        if isinstance(resp.body, ControlFailure):
            self.counters["controls_denied"] += 1
            return ControlResult("denied", cause=resp.body.cause.text)
        return ControlResult("timeout")

    def _resolve_insert(self, call_process_id: bytes, node_id: str,
                        control: RcControl) -> None:
        pending = self.pending_inserts.pop(call_process_id, None)
        if pending is None:
            return
        denied = False
        if isinstance(control, HandoverCommand):
            serving_global = self._cell_global_id(node_id, pending.insert.serving_cell_id)
            denied = (serving_global is not None
                      and control.target_cell_global_id == serving_global)
            if not denied:
                self._touch_uenib(control.ue_id, node_id,
                                  pending.insert.candidate_target_cell_id)
        self.counters["insert_replied_deny" if denied else "insert_replied_accept"] += 1

    def _cell_global_id(self, node_id: str, cell_id: int) -> Optional[int]:
        entry = self.rnib.get(node_id)
        if entry is None:
            return None
        cell = entry.cells.get(cell_id)
        return cell.global_id if cell else None

    def reply_target_for_deny(self, node_id: str, insert: HandoverInsert) -> int:
        """Global id of the insert's serving cell; replying with it as the
        handover target denies the insert."""
        gid = self._cell_global_id(node_id, insert.serving_cell_id)
        if gid is None:
            raise UnknownNode(f"no cell map for node {node_id}")
        return gid

    def reply_target_for_accept(self, node_id: str, insert: HandoverInsert) -> int:
        gid = self._cell_global_id(node_id, insert.candidate_target_cell_id)
        if gid is None:
            # candidate hosted by another node: search every node's cell map
            for entry in self.rnib.values():
                cell = entry.cells.get(insert.candidate_target_cell_id)
                if cell is not None:
                    return cell.global_id
            raise UnknownNode(f"no cell map covers cell {insert.candidate_target_cell_id}")
        return gid

    # --- post-action verification ----------------------------------------------------------

    def _schedule_verify(self, xapp: str, node_id: str, control: RcControl) -> None:
        if not isinstance(control, SlicePrbQuota):
            return
        metric = _OBJECTIVE_METRIC.get(control.slice_id)
        if metric is None:
            return
        self._verify_seq += 1
        self.verify_tasks.append((
            self.now_ms + self.config.verify_window_ms, self._verify_seq, {
                "xapp": xapp, "node": node_id, "cell": control.cell_id,
                "slice": control.slice_id, "metric": metric, "t0": self.now_ms,
                "ref": f"{xapp}/quota@{self.now_ms}",
            }))

    def _run_verify(self, task: dict) -> None:
        window = self.config.verify_window_ms
        series = self.kpm_history.get(
            (task["node"], task["cell"], task["slice"], task["metric"]), [])
        t0 = task["t0"]
        before = [v for (t, v) in series if t0 - window <= t < t0]
        after = [v for (t, v) in series if t0 < t <= t0 + window]
        if len(before) < self.config.verify_min_samples or \
                len(after) < self.config.verify_min_samples:
            verdict, b_mean, a_mean = "insufficient_data", 0.0, 0.0
        else:
            b_mean = sum(before) / len(before)
            a_mean = sum(after) / len(after)
            if b_mean == 0.0 and a_mean == 0.0:
                change = 0.0
            elif b_mean == 0.0:
                change = 1.0
            else:
                change = (a_mean - b_mean) / abs(b_mean)
            change *= _METRIC_POLARITY.get(task["metric"], 1)
            if change > self.config.verify_threshold:
                verdict = "improved"
            elif change < -self.config.verify_threshold:
                verdict = "degraded"
            else:
                verdict = "neutral"
        self.verdicts.append(VerdictRecord(
            control_ref=task["ref"], node_id=task["node"], cell_id=task["cell"],
            slice_id=task["slice"], metric=task["metric"], verdict=verdict,
            before_mean=b_mean, after_mean=a_mean, at_ms=self.now_ms))

    # --- data topics ----------------------------------------------------------------------

    def declare_topic(self, topic: str) -> None:
        self.sdl.create_namespace(f"topic:{topic}")

    def publish_topic(self, producer: Optional[str], topic: str, value) -> int:
        """Publish to a data topic; producer None is the platform. xApp
        producers must declare the topic in produced_data."""
        if producer is not None:
            runtime = self.deployed.get(producer)
            if runtime is None or topic not in runtime.descriptor.produced_data:
                raise UndeclaredTopic(f"{producer} did not declare topic {topic!r}")
        ns = f"topic:{topic}"
        if ns not in self.sdl.namespaces():
            if producer is not None:
                raise UndeclaredTopic(f"topic {topic!r} was never declared")
            self.sdl.create_namespace(ns)
        epoch = self.topic_epochs.get(topic, 0) + 1
        self.topic_epochs[topic] = epoch
        self.sdl.put(ns, "last", {"value": value, "epoch": epoch,
                                  "producer": producer or "platform"},
                     writer=PLATFORM)
        return epoch

    def topic_last(self, topic: str):
        return self.sdl.get_default(f"topic:{topic}", "last")

    # --- xApp lifecycle ----------------------------------------------------------------------

    def onboard(self, descriptor: XappDescriptor) -> None:
        key = descriptor.name
        existing = self.onboarded.get(key)
        if existing is not None and existing.version == descriptor.version:
            raise DuplicateName(f"{key} v{descriptor.version} already onboarded")
        self.onboarded[key] = descriptor

    def deploy(self, name: str, instance=None) -> None:
        descriptor = self.onboarded.get(name)
        if descriptor is None:
            raise NotOnboarded(f"{name} was never onboarded")
        if name in self.deployed:
            raise DuplicateName(f"{name} already deployed")
        if instance is None:
            factory = self.factories.get(name)
            if factory is None:
                raise NotOnboarded(f"no factory registered for {name}")
            instance = factory(descriptor)
        sdk = XappSdk(self, name)
        runtime = _XappRuntime(descriptor, instance, sdk)
        self.deployed[name] = runtime
        self.sdl.create_namespace(f"xapp:{name}")
        for topic in descriptor.produced_data:
            self.declare_topic(topic)
        for topic in descriptor.consumed_data:
            self.declare_topic(topic)
            self.sdl.watch(f"topic:{topic}",
                           self._topic_watcher(name, topic))
        instance.on_deploy(sdk, descriptor)
        instance.on_start()

    def _topic_watcher(self, xapp: str, topic: str):
        def watcher(op: str, key: str, value, seq: int) -> None:
            runtime = self.deployed.get(xapp)
            if runtime is None or op != "put" or key != "last":
                return
            runtime.instance.on_topic(topic, value["value"], value["epoch"])
        return watcher

    def terminate(self, name: str) -> None:
        runtime = self.deployed.pop(name, None)
        if runtime is None:
            raise NotOnboarded(f"{name} is not deployed")
        for record in list(self.records.values()):
            if name in record.subscribers:
                record.subscribers.remove(name)
                if not record.subscribers and record.active:
                    self._end_record(record, reason="last subscriber terminated",
                                     wire_delete=True)
        if hasattr(runtime.instance, "on_terminate"):
            runtime.instance.on_terminate()

    # --- A1 termination ------------------------------------------------------------------------

    def deliver_a1(self, data: bytes) -> None:
        try:
            msg = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self._a1_reply({"error": f"malformed a1 frame: {exc}"})
            return
        op = msg.get("op")
        try:
            if op in ("create", "update"):
                self._a1_upsert(msg)
            elif op == "delete":
                self._a1_delete(msg)
            elif op == "ei":
                self._a1_ei(msg)
            else:
                self._a1_reply({"error": f"unknown a1 op {op!r}"})
        except (UnknownPolicyType, MalformedPolicy) as exc:
            self._a1_reply({"error": str(exc), "policy_id": msg.get("policy_id")})

    def _a1_upsert(self, msg: dict) -> None:
        policy = validate_policy(msg)
        policy_id = policy["policy_id"]
        self.policies[policy_id] = policy
        consumed = any(POLICY_TOPIC in rt.descriptor.consumed_data
                       for rt in self.deployed.values())
        self.publish_topic(None, POLICY_TOPIC,
                           {"op": "apply", "policy": policy})
        if not consumed:
            self.send_policy_feedback(policy_id, enforced=False)

    def _a1_delete(self, msg: dict) -> None:
        policy_id = msg.get("policy_id")
        policy = self.policies.pop(policy_id, None)
        if policy is None:
            self._a1_reply({"error": f"unknown policy {policy_id!r}",
                            "policy_id": policy_id})
            return
        self.publish_topic(None, POLICY_TOPIC, {"op": "remove", "policy": policy})
        self.send_policy_feedback(policy_id, enforced=False)

    def _a1_ei(self, msg: dict) -> None:
        topic = msg.get("topic")
        if not topic:
            raise MalformedPolicy("ei message without topic")
        self.declare_topic(topic)
        self.publish_topic(None, topic, msg.get("payload"))

    def send_policy_feedback(self, policy_id: str, enforced: bool) -> None:
        self._a1_reply({"policy_id": policy_id, "enforced": bool(enforced),
                        "at_ms": self.now_ms})

    def _a1_reply(self, obj: dict) -> None:
        self.a1_out.append(json.dumps(obj, sort_keys=True).encode("utf-8"))

    def drain_a1_out(self) -> list[bytes]:
        out, self.a1_out = self.a1_out, []
        return out

    # --- time ------------------------------------------------------------------------------------

    def advance_to(self, t_ms: int) -> None:
        """Run everything due at or before t: insert deadlines first, then
        xApp loop ticks (descending priority), then verification tasks."""
        self.now_ms = t_ms
        due = sorted([p for p in self.pending_inserts.values()
                      if p.deadline_ms <= t_ms],
                     key=lambda p: (p.deadline_ms, p.call_process_id))
        for pending in due:
            self.pending_inserts.pop(pending.call_process_id, None)
            self.counters["insert_timeout"] += 1
            runtime = self.deployed.get(pending.xapp)
            if runtime is not None and hasattr(runtime.instance, "on_insert_timeout"):
                runtime.instance.on_insert_timeout(pending.insert)
        for runtime in sorted(self.deployed.values(), key=_XappRuntime.order_key):
            while runtime.next_tick_ms <= t_ms:
                tick_at = runtime.next_tick_ms
                runtime.next_tick_ms += runtime.descriptor.loop_period_ms
                runtime.instance.on_tick(tick_at)
        ready = [task for task in self.verify_tasks if task[0] <= t_ms]
        self.verify_tasks = [task for task in self.verify_tasks if task[0] > t_ms]
        for _, _, task in sorted(ready, key=lambda x: (x[0], x[1])):
            self._run_verify(task)

    # --- metrics -----------------------------------------------------------------------------------

    def metrics_snapshot(self) -> dict:
        verdict_counts: dict[str, int] = {}
        for v in self.verdicts:
            verdict_counts[v.verdict] = verdict_counts.get(v.verdict, 0) + 1
        return {
            **self.counters,
            "wire_subscriptions_active": self.wire_subscription_count(),
            "policies_active": len(self.policies),
            "verdicts": verdict_counts,
            "wire_out": dict(sorted(self.wire_out.items())),
            "wire_in": dict(sorted(self.wire_in.items())),
        }

    def metrics_csv(self) -> str:
        return metrics_csv(self.metrics_snapshot())


def metrics_csv(snapshot: dict) -> str:
    lines = ["metric,value"]
    for key in sorted(snapshot):
        value = snapshot[key]
        if isinstance(value, dict):
            for sub in sorted(value):
                lines.append(f"{key}.{sub},{value[sub]}")
        else:
            lines.append(f"{key},{value}")
    return "\n".join(lines) + "\n"


def validate_policy(msg: dict) -> dict:
    """Validate an A1 policy message against its registered policy type."""
    type_id = msg.get("policy_type_id")
    if type_id != SLICING_POLICY_TYPE:
        raise UnknownPolicyType(f"policy type {type_id!r} is not registered")
    policy_id = msg.get("policy_id")
    if not policy_id or not isinstance(policy_id, str):
        raise MalformedPolicy("policy_id must be a non-empty string")
    scope = msg.get("scope")
    if not isinstance(scope, dict) or not scope:
        raise MalformedPolicy("scope must be a non-empty object")
    bad = set(scope) - _VALID_SCOPE_KEYS
    if bad:
        raise MalformedPolicy(f"unknown scope keys {sorted(bad)}")
    statements = msg.get("statements")
    if not isinstance(statements, list) or not statements:
        raise MalformedPolicy("at least one policy statement required")
    for st in statements:
        if not isinstance(st, dict):
            raise MalformedPolicy("statement must be an object")
        if st.get("kind") not in ("resource", "objective"):
            raise MalformedPolicy(f"statement kind {st.get('kind')!r} invalid")
        if not st.get("name"):
            raise MalformedPolicy("statement needs a metric/parameter name")
        if st.get("comparator") not in ("<", "<=", ">", ">="):
            raise MalformedPolicy(f"statement comparator {st.get('comparator')!r} invalid")
        if not isinstance(st.get("value"), (int, float)):
            raise MalformedPolicy("statement value must be numeric")
    return {
        "policy_id": policy_id,
        "policy_type_id": type_id,
        "scope": scope,
        "statements": statements,
    }


class XappSdk:
    """The platform surface handed to each xApp instance."""

    def __init__(self, ric: NearRtRic, xapp: str):
        self._ric = ric
        self.xapp = xapp

    @property
    def now_ms(self) -> int:
        return self._ric.now_ms

    # subscriptions
    def subscribe_kpm(self, node_id: str, period_ms: int,
                      action_def: KpmActionDefinition) -> SubscriptionKey:
        trigger = encode_payload(KpmEventTrigger(period_ms))
        action = RicAction(1, e2codec.ActionType.REPORT, encode_payload(action_def))
        return self._ric.xapp_subscribe(self.xapp, node_id, 1, trigger, (action,))

    def subscribe_insert(self, node_id: str,
                         wait: TimeToWait = TimeToWait.W10MS) -> SubscriptionKey:
        trigger = encode_payload(RcEventTrigger("a3_rsrp"))
        action = RicAction(
            1, e2codec.ActionType.INSERT,
            encode_payload(RcActionDefinition(RcDomain.MOBILITY)),
            e2codec.SubsequentAction(e2codec.SubsequentType.CONTINUE, wait))
        return self._ric.xapp_subscribe(self.xapp, node_id, 2, trigger, (action,))

    def unsubscribe(self, key: SubscriptionKey) -> None:
        self._ric.xapp_unsubscribe(self.xapp, key)

    # control
    def control(self, node_id: str, control: RcControl,
                in_reply_to: Optional[bytes] = None) -> ControlResult:
        return self._ric.submit_control(self.xapp, node_id, control, in_reply_to)

    def accept_insert(self, node_id: str, insert: HandoverInsert) -> ControlResult:
        target = self._ric.reply_target_for_accept(node_id, insert)
        return self.control(node_id, HandoverCommand(insert.ue_id, target),
                            in_reply_to=insert.call_process_id)

    def deny_insert(self, node_id: str, insert: HandoverInsert) -> ControlResult:
        target = self._ric.reply_target_for_deny(node_id, insert)
        return self.control(node_id, HandoverCommand(insert.ue_id, target),
                            in_reply_to=insert.call_process_id)

    # data topics and SDL
    def publish(self, topic: str, value) -> int:
        return self._ric.publish_topic(self.xapp, topic, value)

    def topic_last(self, topic: str):
        return self._ric.topic_last(topic)

    def store_put(self, key: str, value) -> None:
        self._ric.sdl.put(f"xapp:{self.xapp}", key, value, writer=self.xapp)

    def store_get(self, key: str, default=None):
        return self._ric.sdl.get_default(f"xapp:{self.xapp}", key, default)

    def rnib_nodes(self) -> list[str]:
        return sorted(self._ric.rnib)

    def rnib_cells(self, node_id: str) -> list[CellInfo]:
        entry = self._ric.rnib.get(node_id)
        if entry is None:
            raise UnknownNode(node_id)
        return [entry.cells[cid] for cid in sorted(entry.cells)]

    # policies
    def ack_policy(self, policy_id: str, enforced: bool = True) -> None:
        self._ric.send_policy_feedback(policy_id, enforced)
