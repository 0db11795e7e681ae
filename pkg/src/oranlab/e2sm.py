"""Service-model payloads carried opaquely inside E2AP messages.

Three models are registered:

    0x01  kpm  telemetry: triggers, action definitions, indication
               headers, measurement records
    0x02  rc   control: slice PRB quotas, handovers, control/offset/
               scheduler policies, the A3 handover insert
    0x03  ni   opaque passthrough of interface messages

Wire form: 1-byte model id, 1-byte payload kind, then TLV fields with the
same conventions as the E2AP codec (1-byte tag, 3-byte big-endian length).
Unsupported RC domains (dual connectivity, carrier aggregation, idle
mobility, radio access) raise UnsupportedDomain.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Union

from .e2codec import _Reader, _Writer  # same TLV conventions
from .errors import (
    InvariantViolation, MalformedFrame, MalformedPayload, UnknownServiceModel,
)


class ModelId(IntEnum):
    KPM = 0x01
    RC = 0x02
    NI = 0x03


class NodeKind(IntEnum):
    DU = 0
    CU_UP = 1
    CU_CP = 2

    def render(self) -> str:
        return self.name.lower()


class ScopeKind(IntEnum):
    NODE = 0
    CELL = 1
    SLICE = 2
    UE = 3


class Comparator(IntEnum):
    LT = 0
    LE = 1
    GT = 2
    GE = 3

    def render(self) -> str:
        return {0: "<", 1: "<=", 2: ">", 3: ">="}[self]

    @staticmethod
    def parse(text: str) -> "Comparator":
        table = {"<": Comparator.LT, "<=": Comparator.LE, ">": Comparator.GT, ">=": Comparator.GE}
        if text not in table:
            raise InvariantViolation(f"unknown comparator {text!r}")
        return table[text]

    def holds(self, left: float, right: float) -> bool:
        if self == Comparator.LT:
            return left < right
        if self == Comparator.LE:
            return left <= right
        if self == Comparator.GT:
            return left > right
        return left >= right


class SliceScheduler(IntEnum):
    ROUND_ROBIN = 0
    HIGHEST_BUFFER_FIRST = 1


class RcDomain(IntEnum):
    """RC control domains this stack implements."""

    RESOURCE_ALLOCATION = 0
    MOBILITY = 1
    POLICY = 2


# Tunables an OffsetPolicy may target. Extended via register_tunable().
REGISTERED_TUNABLES: set[str] = {"a3_offset_db"}


def register_tunable(name: str) -> None:
    REGISTERED_TUNABLES.add(name)


# --- metric catalogs --------------------------------------------------------

_CATALOGS: dict[NodeKind, tuple[str, ...]] = {
    NodeKind.DU: ("tx_bytes", "tx_packets", "buffer_bytes",
                  "latency_proxy_ms", "prb_granted", "prb_requested"),
    NodeKind.CU_UP: ("pdcp_tx_bytes", "pdcp_queue_bytes"),
    NodeKind.CU_CP: ("connected_ues", "handover_count"),
}


def metric_catalog(node_kind: NodeKind) -> tuple[str, ...]:
    """Counters the given container kind can report, in stable order."""
    return _CATALOGS[node_kind]


# --- scopes -----------------------------------------------------------------

@dataclass(frozen=True)
class Scope:
    """Where a measurement or action definition applies."""

    kind: ScopeKind
    cell_id: Optional[int] = None
    slice_id: Optional[str] = None
    ue_id: Optional[int] = None

    @staticmethod
    def node() -> "Scope":
        return Scope(ScopeKind.NODE)

    @staticmethod
    def cell(cell_id: int) -> "Scope":
        return Scope(ScopeKind.CELL, cell_id=cell_id)

    @staticmethod
    def slice_(cell_id: int, slice_id: str) -> "Scope":
        return Scope(ScopeKind.SLICE, cell_id=cell_id, slice_id=slice_id)

    @staticmethod
    def ue(ue_id: int) -> "Scope":
        return Scope(ScopeKind.UE, ue_id=ue_id)

    def check(self) -> None:
        need = {
            ScopeKind.NODE: (False, False, False),
            ScopeKind.CELL: (True, False, False),
            ScopeKind.SLICE: (True, True, False),
            ScopeKind.UE: (False, False, True),
        }[self.kind]
        have = (self.cell_id is not None, self.slice_id is not None, self.ue_id is not None)
        if need != have:
            raise InvariantViolation(f"scope {self.kind.name} has wrong id fields")


# --- KPM payloads -------------------------------------------------------------

@dataclass(frozen=True)
class KpmEventTrigger:
    """Periodic reporting trigger. The default admission band is the
    near-RT loop range, 10 ms to 1 s; nodes may be configured wider."""

    report_period_ms: int

    def check(self, band: tuple[int, int] = (10, 1000)) -> None:
        if self.report_period_ms < 1:
            raise InvariantViolation("report period must be positive")
        lo, hi = band
        if not lo <= self.report_period_ms <= hi:
            raise InvariantViolation(
                f"report period {self.report_period_ms} ms outside band {lo}..{hi} ms")


@dataclass(frozen=True)
class KpmActionDefinition:
    node_kind: NodeKind
    scope: Scope
    metrics: tuple[str, ...]

    def check(self) -> None:
        self.scope.check()
        if not self.metrics:
            raise InvariantViolation("action definition needs at least one metric")
        catalog = metric_catalog(self.node_kind)
        unknown = [m for m in self.metrics if m not in catalog]
        if unknown:
            raise InvariantViolation(
                f"metrics {unknown} not in the {self.node_kind.render()} catalog")


@dataclass(frozen=True)
class KpmIndicationHeader:
    node_id: str
    collection_start_ms: int


@dataclass(frozen=True)
class KpmRecord:
    metric: str
    scope: Scope
    timestamp_ms: int
    value: float


@dataclass(frozen=True)
class KpmMeasurements:
    records: tuple[KpmRecord, ...]

    def check(self) -> None:
        last = None
        for rec in self.records:
            rec.scope.check()
            if last is not None and rec.timestamp_ms < last:
                raise InvariantViolation("record timestamps must be non-decreasing")
            last = rec.timestamp_ms


@dataclass(frozen=True)
class KpmIndication:
    """A decoded report: header plus measurement records. Assembled at the
    RIC from the indication's header and message payloads."""

    header: KpmIndicationHeader
    records: tuple[KpmRecord, ...]


@dataclass(frozen=True)
class KpmFunctionDefinition:
    """What a node's KPM function can feed: which containers it fills."""

    containers: tuple[NodeKind, ...]


# --- RC payloads ---------------------------------------------------------------

@dataclass(frozen=True)
class SlicePrbQuota:
    cell_id: int
    slice_id: str
    dedicated_prb: int
    min_ratio: float = 0.0
    max_ratio: float = 1.0

    def check(self) -> None:
        if self.dedicated_prb < 0:
            raise InvariantViolation("dedicated_prb must be non-negative")
        if not (0.0 <= self.min_ratio <= self.max_ratio <= 1.0):
            raise InvariantViolation(
                f"ratios must satisfy 0 <= min ({self.min_ratio}) <= max ({self.max_ratio}) <= 1")


@dataclass(frozen=True)
class HandoverCommand:
    ue_id: int
    target_cell_global_id: int


@dataclass(frozen=True)
class OffsetPolicy:
    parameter_name: str
    delta: float

    def check(self) -> None:
        if self.parameter_name not in REGISTERED_TUNABLES:
            raise InvariantViolation(
                f"{self.parameter_name!r} is not a registered tunable")


@dataclass(frozen=True)
class SchedulerPolicy:
    """Installs the intra-slice scheduler a DU uses for one slice."""

    cell_id: int
    slice_id: str
    scheduler: SliceScheduler


@dataclass(frozen=True)
class ControlPolicy:
    """Node-local rule: when the trigger condition holds (evaluated against
    the action target's metric each tick, edge-triggered), apply the nested
    control without RIC interaction."""

    trigger_metric: str
    comparator: Comparator
    threshold: float
    action: "RcControl"

    def check(self) -> None:
        check_rc_control(self.action)


RcControl = Union[SlicePrbQuota, HandoverCommand, ControlPolicy, OffsetPolicy, SchedulerPolicy]

RC_DOMAIN_OF: dict[type, RcDomain] = {
    SlicePrbQuota: RcDomain.RESOURCE_ALLOCATION,
    SchedulerPolicy: RcDomain.RESOURCE_ALLOCATION,
    HandoverCommand: RcDomain.MOBILITY,
    ControlPolicy: RcDomain.POLICY,
    OffsetPolicy: RcDomain.POLICY,
}


def rc_domain(control: RcControl) -> RcDomain:
    return RC_DOMAIN_OF[type(control)]


def check_rc_control(control: RcControl) -> None:
    if type(control) not in RC_DOMAIN_OF:
        raise InvariantViolation(f"not an RC control: {type(control).__name__}")
    check = getattr(control, "check", None)
    if check:
        check()


@dataclass(frozen=True)
class HandoverInsert:
    """A3 event notification: a neighbour's RSRP beats the serving cell's
    by at least the configured offset. The RAN suspends its own handover
    and waits for the RIC."""

    ue_id: int
    serving_cell_id: int
    candidate_target_cell_id: int
    serving_rsrp_dbm: float
    target_rsrp_dbm: float
    call_process_id: bytes


@dataclass(frozen=True)
class RcEventTrigger:
    event: str = "a3_rsrp"


@dataclass(frozen=True)
class RcActionDefinition:
    domain: RcDomain


@dataclass(frozen=True)
class CellInfo:
    """Cell layout advertised in the RC function definition."""

    cell_id: int
    global_id: int
    total_prb: int
    slice_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class RcFunctionDefinition:
    domains: tuple[RcDomain, ...]
    cells: tuple[CellInfo, ...] = ()


# --- NI payloads ----------------------------------------------------------------

@dataclass(frozen=True)
class NiMessage:
    """Interface message (X2/Xn/F1) forwarded opaquely."""

    interface: str
    data: bytes


@dataclass(frozen=True)
class NiFunctionDefinition:
    interfaces: tuple[str, ...]


# --- wire encoding ----------------------------------------------------------------

class _T(IntEnum):
    PERIOD = 1
    NODE_KIND = 2
    SCOPE = 3
    METRICS = 4
    NODE_ID = 5
    COLLECTION_START = 6
    RECORDS = 7
    RECORD_ITEM = 8
    METRIC = 9
    TIMESTAMP = 10
    VALUE = 11
    CONTAINERS = 12
    CELL_ID = 13
    SLICE_ID = 14
    UE_ID = 15
    DEDICATED_PRB = 16
    MIN_RATIO = 17
    MAX_RATIO = 18
    TARGET_CELL_GLOBAL_ID = 19
    PARAMETER_NAME = 20
    DELTA = 21
    TRIGGER_METRIC = 22
    COMPARATOR = 23
    THRESHOLD = 24
    NESTED_ACTION = 25
    SCHEDULER = 26
    SERVING_CELL = 27
    CANDIDATE_CELL = 28
    SERVING_RSRP = 29
    TARGET_RSRP = 30
    CALL_PROCESS_ID = 31
    EVENT = 32
    DOMAIN = 33
    DOMAINS = 34
    INTERFACE = 35
    INTERFACES = 36
    DATA = 37
    SCOPE_KIND = 38
    CELLS = 39
    CELL_ITEM = 40
    TOTAL_PRB = 41
    GLOBAL_ID = 42
    SLICE_IDS = 43


def _wf(w: _Writer, tag: _T, value: float) -> None:
    w.tlv(tag, struct.pack(">d", value))


def _rf(r: _Reader, tag: _T) -> float:
    raw = r.tlv(tag)
    if len(raw) != 8:
        raise MalformedFrame(f"{tag.name} must be 8 bytes")
    return struct.unpack(">d", raw)[0]


def _wu64(w: _Writer, tag: _T, value: int) -> None:
    if not 0 <= value < 2**64:
        raise InvariantViolation(f"{tag.name} outside 64-bit unsigned range")
    w.tlv(tag, value.to_bytes(8, "big"))


def _ru64(r: _Reader, tag: _T) -> int:
    raw = r.tlv(tag)
    if len(raw) != 8:
        raise MalformedFrame(f"{tag.name} must be 8 bytes")
    return int.from_bytes(raw, "big")


def _put_scope(w: _Writer, scope: Scope) -> None:
    scope.check()
    inner = _Writer()
    inner.u8(_T.SCOPE_KIND, int(scope.kind))
    if scope.cell_id is not None:
        inner.u32(_T.CELL_ID, scope.cell_id)
    if scope.slice_id is not None:
        inner.text(_T.SLICE_ID, scope.slice_id)
    if scope.ue_id is not None:
        _wu64(inner, _T.UE_ID, scope.ue_id)
    w.tlv(_T.SCOPE, inner.done())


def _get_scope(r: _Reader) -> Scope:
    inner = _Reader(r.tlv(_T.SCOPE))
    kind = ScopeKind(inner.u8(_T.SCOPE_KIND))
    cell = inner.u32(_T.CELL_ID) if inner.peek_tag() == _T.CELL_ID else None
    slc = inner.text(_T.SLICE_ID) if inner.peek_tag() == _T.SLICE_ID else None
    ue = _ru64(inner, _T.UE_ID) if inner.peek_tag() == _T.UE_ID else None
    if not inner.at_end():
        raise MalformedFrame("trailing bytes in scope")
    scope = Scope(kind, cell, slc, ue)
    scope.check()
    return scope


def _put_texts(w: _Writer, tag: _T, values: tuple[str, ...]) -> None:
    inner = _Writer()
    for v in values:
        inner.text(_T.METRIC, v)
    w.tlv(tag, inner.done())


def _get_texts(r: _Reader, tag: _T) -> tuple[str, ...]:
    inner = _Reader(r.tlv(tag))
    out = []
    while not inner.at_end():
        out.append(inner.text(_T.METRIC))
    return tuple(out)


# payload kind bytes, unique within each model
_KPM_KINDS: dict[type, int] = {
    KpmEventTrigger: 1, KpmActionDefinition: 2, KpmIndicationHeader: 3,
    KpmMeasurements: 4, KpmFunctionDefinition: 5,
}
_RC_KINDS: dict[type, int] = {
    SlicePrbQuota: 1, HandoverCommand: 2, ControlPolicy: 3, OffsetPolicy: 4,
    SchedulerPolicy: 5, HandoverInsert: 6, RcEventTrigger: 7,
    RcActionDefinition: 8, RcFunctionDefinition: 9,
}
_NI_KINDS: dict[type, int] = {NiMessage: 1, NiFunctionDefinition: 2}

MODEL_OF_PAYLOAD: dict[type, ModelId] = {}
for _t in _KPM_KINDS:
    MODEL_OF_PAYLOAD[_t] = ModelId.KPM
for _t in _RC_KINDS:
    MODEL_OF_PAYLOAD[_t] = ModelId.RC
for _t in _NI_KINDS:
    MODEL_OF_PAYLOAD[_t] = ModelId.NI


def _encode_kpm(payload) -> bytes:
    w = _Writer()
    if isinstance(payload, KpmEventTrigger):
        if payload.report_period_ms < 1:
            raise InvariantViolation("report period must be positive")
        w.u32(_T.PERIOD, payload.report_period_ms)
    elif isinstance(payload, KpmActionDefinition):
        payload.check()
        w.u8(_T.NODE_KIND, int(payload.node_kind))
        _put_scope(w, payload.scope)
        _put_texts(w, _T.METRICS, tuple(payload.metrics))
    elif isinstance(payload, KpmIndicationHeader):
        w.text(_T.NODE_ID, payload.node_id)
        _wu64(w, _T.COLLECTION_START, payload.collection_start_ms)
    elif isinstance(payload, KpmMeasurements):
        payload.check()
        inner = _Writer()
        for rec in payload.records:
            item = _Writer()
            item.text(_T.METRIC, rec.metric)
            _put_scope(item, rec.scope)
            _wu64(item, _T.TIMESTAMP, rec.timestamp_ms)
            _wf(item, _T.VALUE, rec.value)
            inner.tlv(_T.RECORD_ITEM, item.done())
        w.tlv(_T.RECORDS, inner.done())
    elif isinstance(payload, KpmFunctionDefinition):
        w.tlv(_T.CONTAINERS, bytes(int(k) for k in payload.containers))
    return w.done()


def _decode_kpm(kind: int, r: _Reader):
    if kind == _KPM_KINDS[KpmEventTrigger]:
        return KpmEventTrigger(r.u32(_T.PERIOD))
    if kind == _KPM_KINDS[KpmActionDefinition]:
        payload = KpmActionDefinition(
            NodeKind(r.u8(_T.NODE_KIND)), _get_scope(r), _get_texts(r, _T.METRICS))
        payload.check()
        return payload
    if kind == _KPM_KINDS[KpmIndicationHeader]:
        return KpmIndicationHeader(r.text(_T.NODE_ID), _ru64(r, _T.COLLECTION_START))
    if kind == _KPM_KINDS[KpmMeasurements]:
        inner = _Reader(r.tlv(_T.RECORDS))
        records = []
        while not inner.at_end():
            item = _Reader(inner.tlv(_T.RECORD_ITEM))
            records.append(KpmRecord(
                item.text(_T.METRIC), _get_scope(item),
                _ru64(item, _T.TIMESTAMP), _rf(item, _T.VALUE)))
            if not item.at_end():
                raise MalformedFrame("trailing bytes in KPM record")
        payload = KpmMeasurements(tuple(records))
        payload.check()
        return payload
    if kind == _KPM_KINDS[KpmFunctionDefinition]:
        raw = r.tlv(_T.CONTAINERS)
        return KpmFunctionDefinition(tuple(NodeKind(b) for b in raw))
    raise MalformedFrame(f"unknown kpm payload kind {kind}")


def _encode_rc(payload) -> bytes:
    w = _Writer()
    if isinstance(payload, SlicePrbQuota):
        payload.check()
        w.u32(_T.CELL_ID, payload.cell_id)
        w.text(_T.SLICE_ID, payload.slice_id)
        w.u32(_T.DEDICATED_PRB, payload.dedicated_prb)
        _wf(w, _T.MIN_RATIO, payload.min_ratio)
        _wf(w, _T.MAX_RATIO, payload.max_ratio)
    elif isinstance(payload, HandoverCommand):
        _wu64(w, _T.UE_ID, payload.ue_id)
        _wu64(w, _T.TARGET_CELL_GLOBAL_ID, payload.target_cell_global_id)
    elif isinstance(payload, ControlPolicy):
        w.text(_T.TRIGGER_METRIC, payload.trigger_metric)
        w.u8(_T.COMPARATOR, int(payload.comparator))
        _wf(w, _T.THRESHOLD, payload.threshold)
        w.tlv(_T.NESTED_ACTION, sm_encode(ModelId.RC, payload.action))
    elif isinstance(payload, OffsetPolicy):
        payload.check()
        w.text(_T.PARAMETER_NAME, payload.parameter_name)
        _wf(w, _T.DELTA, payload.delta)
    elif isinstance(payload, SchedulerPolicy):
        w.u32(_T.CELL_ID, payload.cell_id)
        w.text(_T.SLICE_ID, payload.slice_id)
        w.u8(_T.SCHEDULER, int(payload.scheduler))
    elif isinstance(payload, HandoverInsert):
        _wu64(w, _T.UE_ID, payload.ue_id)
        w.u32(_T.SERVING_CELL, payload.serving_cell_id)
        w.u32(_T.CANDIDATE_CELL, payload.candidate_target_cell_id)
        _wf(w, _T.SERVING_RSRP, payload.serving_rsrp_dbm)
        _wf(w, _T.TARGET_RSRP, payload.target_rsrp_dbm)
        w.tlv(_T.CALL_PROCESS_ID, payload.call_process_id)
    elif isinstance(payload, RcEventTrigger):
        w.text(_T.EVENT, payload.event)
    elif isinstance(payload, RcActionDefinition):
        w.u8(_T.DOMAIN, int(payload.domain))
    elif isinstance(payload, RcFunctionDefinition):
        w.tlv(_T.DOMAINS, bytes(int(d) for d in payload.domains))
        cells = _Writer()
        for cell in payload.cells:
            item = _Writer()
            item.u32(_T.CELL_ID, cell.cell_id)
            _wu64(item, _T.GLOBAL_ID, cell.global_id)
            item.u32(_T.TOTAL_PRB, cell.total_prb)
            _put_texts(item, _T.SLICE_IDS, tuple(cell.slice_ids))
            cells.tlv(_T.CELL_ITEM, item.done())
        w.tlv(_T.CELLS, cells.done())
    return w.done()


def _decode_rc(kind: int, r: _Reader):
    if kind == _RC_KINDS[SlicePrbQuota]:
        payload = SlicePrbQuota(
            r.u32(_T.CELL_ID), r.text(_T.SLICE_ID), r.u32(_T.DEDICATED_PRB),
            _rf(r, _T.MIN_RATIO), _rf(r, _T.MAX_RATIO))
        payload.check()
        return payload
    if kind == _RC_KINDS[HandoverCommand]:
        return HandoverCommand(_ru64(r, _T.UE_ID), _ru64(r, _T.TARGET_CELL_GLOBAL_ID))
    if kind == _RC_KINDS[ControlPolicy]:
        metric = r.text(_T.TRIGGER_METRIC)
        comparator = Comparator(r.u8(_T.COMPARATOR))
        threshold = _rf(r, _T.THRESHOLD)
        model, action = sm_decode(r.tlv(_T.NESTED_ACTION))
        if model != ModelId.RC or type(action) not in RC_DOMAIN_OF:
            raise MalformedFrame("control policy nests a non-control payload")
        return ControlPolicy(metric, comparator, threshold, action)
    if kind == _RC_KINDS[OffsetPolicy]:
        payload = OffsetPolicy(r.text(_T.PARAMETER_NAME), _rf(r, _T.DELTA))
        payload.check()
        return payload
    if kind == _RC_KINDS[SchedulerPolicy]:
        return SchedulerPolicy(
            r.u32(_T.CELL_ID), r.text(_T.SLICE_ID), SliceScheduler(r.u8(_T.SCHEDULER)))
    if kind == _RC_KINDS[HandoverInsert]:
        return HandoverInsert(
            _ru64(r, _T.UE_ID), r.u32(_T.SERVING_CELL), r.u32(_T.CANDIDATE_CELL),
            _rf(r, _T.SERVING_RSRP), _rf(r, _T.TARGET_RSRP), r.tlv(_T.CALL_PROCESS_ID))
    if kind == _RC_KINDS[RcEventTrigger]:
        return RcEventTrigger(r.text(_T.EVENT))
    if kind == _RC_KINDS[RcActionDefinition]:
        return RcActionDefinition(RcDomain(r.u8(_T.DOMAIN)))
    if kind == _RC_KINDS[RcFunctionDefinition]:
        domains = tuple(RcDomain(b) for b in r.tlv(_T.DOMAINS))
        cells = []
        inner = _Reader(r.tlv(_T.CELLS))
        while not inner.at_end():
            item = _Reader(inner.tlv(_T.CELL_ITEM))
            cells.append(CellInfo(
                item.u32(_T.CELL_ID), _ru64(item, _T.GLOBAL_ID),
                item.u32(_T.TOTAL_PRB), _get_texts(item, _T.SLICE_IDS)))
            if not item.at_end():
                raise MalformedFrame("trailing bytes in cell item")
        return RcFunctionDefinition(domains, tuple(cells))
    raise MalformedFrame(f"unknown rc payload kind {kind}")


def _encode_ni(payload) -> bytes:
    w = _Writer()
    if isinstance(payload, NiMessage):
        w.text(_T.INTERFACE, payload.interface)
        w.tlv(_T.DATA, payload.data)
    elif isinstance(payload, NiFunctionDefinition):
        _put_texts(w, _T.INTERFACES, tuple(payload.interfaces))
    return w.done()


def _decode_ni(kind: int, r: _Reader):
    if kind == _NI_KINDS[NiMessage]:
        return NiMessage(r.text(_T.INTERFACE), r.tlv(_T.DATA))
    if kind == _NI_KINDS[NiFunctionDefinition]:
        return NiFunctionDefinition(_get_texts(r, _T.INTERFACES))
    raise MalformedFrame(f"unknown ni payload kind {kind}")


_KINDS_BY_MODEL = {ModelId.KPM: _KPM_KINDS, ModelId.RC: _RC_KINDS, ModelId.NI: _NI_KINDS}
_ENCODERS = {ModelId.KPM: _encode_kpm, ModelId.RC: _encode_rc, ModelId.NI: _encode_ni}
_DECODERS = {ModelId.KPM: _decode_kpm, ModelId.RC: _decode_rc, ModelId.NI: _decode_ni}


def sm_encode(model_id: ModelId, payload) -> bytes:
    """Encode a service-model payload; deterministic, prefixed with the
    model id byte so the receiver can dispatch."""
    expected = MODEL_OF_PAYLOAD.get(type(payload))
    if expected is None:
        raise InvariantViolation(f"{type(payload).__name__} is not a service-model payload")
    if expected != model_id:
        raise InvariantViolation(
            f"{type(payload).__name__} belongs to {expected.name}, not {ModelId(model_id).name}")
    kind = _KINDS_BY_MODEL[expected][type(payload)]
    return bytes([int(model_id), kind]) + _ENCODERS[expected](payload)


def encode_payload(payload) -> bytes:
    """sm_encode with the model id inferred from the payload type."""
    expected = MODEL_OF_PAYLOAD.get(type(payload))
    if expected is None:
        raise InvariantViolation(f"{type(payload).__name__} is not a service-model payload")
    return sm_encode(expected, payload)


def sm_decode(data: bytes):
    """Decode opaque bytes into (model_id, payload). Inverse of sm_encode."""
    if len(data) < 2:
        raise MalformedPayload(f"payload too short ({len(data)} bytes)")
    try:
        model = ModelId(data[0])
    except ValueError:
        raise UnknownServiceModel(f"unknown service model id 0x{data[0]:02x}") from None
    r = _Reader(data[2:])
    try:
        payload = _DECODERS[model](data[1], r)
    except (MalformedFrame, InvariantViolation, ValueError) as exc:
        raise MalformedPayload(f"{model.name} payload: {exc}") from exc
    if not r.at_end():
        raise MalformedPayload(f"{model.name} payload has trailing bytes")
    return model, payload
