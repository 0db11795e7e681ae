"""E2AP message types and their canonical binary encoding.

Wire layout (bit-exact):

    byte 0      version, always 0x01
    byte 1      pdu class: 0 initiating / 1 successful / 2 unsuccessful
    bytes 2-3   procedure code, big-endian
    then        fields as TLV: 1-byte tag, 3-byte big-endian length, value

Fields are written in a fixed order per message type, so encoding is a
pure function and equal PDUs always produce identical bytes. The decoder
accepts exactly that canonical form and rejects anything else (trailing
bytes, reordered fields, truncation).

Procedure codes: subscription=8 and indication=5; the remaining codes
(setup=1, service update=2, error indication=3, control=4, subscription
delete=9) are local constants of this stack.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

from .errors import InvariantViolation, MalformedFrame, UnknownProcedureCode

VERSION = 0x01
MAX_OPAQUE = 2**24 - 1  # TLV length field is 3 bytes
U32_MAX = 2**32 - 1


class PduClass(IntEnum):
    INITIATING = 0
    SUCCESSFUL = 1
    UNSUCCESSFUL = 2

    def render(self) -> str:
        return {0: "initiatingMessage", 1: "successfulOutcome", 2: "unsuccessfulOutcome"}[self]


class ProcedureCode(IntEnum):
    SETUP = 1
    SERVICE_UPDATE = 2
    ERROR_INDICATION = 3
    CONTROL = 4
    INDICATION = 5
    SUBSCRIPTION = 8
    SUBSCRIPTION_DELETE = 9


class ActionType(IntEnum):
    REPORT = 0
    INSERT = 1
    POLICY = 2


class SubsequentType(IntEnum):
    CONTINUE = 0
    WAIT = 1


class TimeToWait(IntEnum):
    W1MS = 0
    W2MS = 1
    W5MS = 2
    W10MS = 3
    W20MS = 4
    W50MS = 5
    W100MS = 6
    W200MS = 7
    W500MS = 8
    W1S = 9
    W2S = 10
    W5S = 11
    W10S = 12

    def render(self) -> str:
        return self.name.lower()

    @property
    def millis(self) -> int:
        return _TTW_MS[self]


_TTW_MS = {
    TimeToWait.W1MS: 1, TimeToWait.W2MS: 2, TimeToWait.W5MS: 5,
    TimeToWait.W10MS: 10, TimeToWait.W20MS: 20, TimeToWait.W50MS: 50,
    TimeToWait.W100MS: 100, TimeToWait.W200MS: 200, TimeToWait.W500MS: 500,
    TimeToWait.W1S: 1000, TimeToWait.W2S: 2000, TimeToWait.W5S: 5000,
    TimeToWait.W10S: 10000,
}


class IndicationType(IntEnum):
    REPORT = 0
    INSERT = 1


class CauseKind(IntEnum):
    UNSUPPORTED = 0
    REJECTED = 1
    TIMEOUT = 2
    CONFLICT = 3


@dataclass(frozen=True)
class Cause:
    kind: CauseKind
    text: str = ""


@dataclass(frozen=True)
class RicRequestId:
    """Identifies one RIC-initiated procedure; unique per (RIC, E2 node)."""

    requestor_id: int
    instance_id: int

    def check(self) -> None:
        _check_u32("ricRequestorID", self.requestor_id)
        _check_u32("ricInstanceID", self.instance_id)


@dataclass(frozen=True)
class RanFunction:
    """A service a node exposes; `definition` is a service-model descriptor."""

    function_id: int
    name: str
    revision: int = 0
    definition: bytes = b""

    def check(self) -> None:
        _check_u32("RANfunctionID", self.function_id)
        _check_u32("ranFunctionRevision", self.revision)
        _check_opaque("ranFunctionDefinition", self.definition)


@dataclass(frozen=True)
class SubsequentAction:
    kind: SubsequentType
    time_to_wait: TimeToWait


@dataclass(frozen=True)
class RicAction:
    action_id: int
    action_type: ActionType
    definition: bytes = b""
    subsequent: Optional[SubsequentAction] = None

    def check(self) -> None:
        if not 0 <= self.action_id <= 255:
            raise InvariantViolation(f"ricActionID {self.action_id} outside 0..255")
        _check_opaque("ricActionDefinition", self.definition)


# --- message bodies --------------------------------------------------------

@dataclass(frozen=True)
class SetupRequest:
    node_id: str
    functions: tuple[RanFunction, ...] = ()


@dataclass(frozen=True)
class SetupResponse:
    accepted_ids: tuple[int, ...] = ()
    rejected_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class SubscriptionRequest:
    request_id: RicRequestId
    function_id: int
    event_trigger: bytes
    actions: tuple[RicAction, ...] = ()


@dataclass(frozen=True)
class SubscriptionResponse:
    request_id: RicRequestId
    admitted_action_ids: tuple[int, ...] = ()
    rejected_action_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class SubscriptionFailure:
    request_id: RicRequestId
    cause: Cause = field(default_factory=lambda: Cause(CauseKind.REJECTED))


@dataclass(frozen=True)
class SubscriptionDeleteRequest:
    request_id: RicRequestId
    function_id: int = 0


@dataclass(frozen=True)
class SubscriptionDeleteResponse:
    request_id: RicRequestId


@dataclass(frozen=True)
class Indication:
    request_id: RicRequestId
    function_id: int
    action_id: int
    indication_type: IndicationType
    header: bytes = b""
    message: bytes = b""
    sequence_number: Optional[int] = None
    call_process_id: Optional[bytes] = None


@dataclass(frozen=True)
class ControlRequest:
    request_id: RicRequestId
    function_id: int
    header: bytes = b""
    message: bytes = b""
    call_process_id: Optional[bytes] = None
    ack_requested: bool = True


@dataclass(frozen=True)
class ControlAcknowledge:
    request_id: RicRequestId
    outcome: bytes = b""


@dataclass(frozen=True)
class ControlFailure:
    request_id: RicRequestId
    cause: Cause = field(default_factory=lambda: Cause(CauseKind.REJECTED))


@dataclass(frozen=True)
class ServiceUpdate:
    added: tuple[RanFunction, ...] = ()
    modified: tuple[RanFunction, ...] = ()
    deleted_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class ServiceUpdateAck:
    accepted_ids: tuple[int, ...] = ()
    rejected_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class ErrorIndication:
    cause: Cause = field(default_factory=lambda: Cause(CauseKind.REJECTED))


Body = Union[
    SetupRequest, SetupResponse, SubscriptionRequest, SubscriptionResponse,
    SubscriptionFailure, SubscriptionDeleteRequest, SubscriptionDeleteResponse,
    Indication, ControlRequest, ControlAcknowledge, ControlFailure,
    ServiceUpdate, ServiceUpdateAck, ErrorIndication,
]

# body type -> (pdu class, procedure code); the one source of truth
CODE_TABLE: dict[type, tuple[PduClass, ProcedureCode]] = {
    SetupRequest: (PduClass.INITIATING, ProcedureCode.SETUP),
    SetupResponse: (PduClass.SUCCESSFUL, ProcedureCode.SETUP),
    ServiceUpdate: (PduClass.INITIATING, ProcedureCode.SERVICE_UPDATE),
    ServiceUpdateAck: (PduClass.SUCCESSFUL, ProcedureCode.SERVICE_UPDATE),
    ErrorIndication: (PduClass.INITIATING, ProcedureCode.ERROR_INDICATION),
    ControlRequest: (PduClass.INITIATING, ProcedureCode.CONTROL),
    ControlAcknowledge: (PduClass.SUCCESSFUL, ProcedureCode.CONTROL),
    ControlFailure: (PduClass.UNSUCCESSFUL, ProcedureCode.CONTROL),
    Indication: (PduClass.INITIATING, ProcedureCode.INDICATION),
    SubscriptionRequest: (PduClass.INITIATING, ProcedureCode.SUBSCRIPTION),
    SubscriptionResponse: (PduClass.SUCCESSFUL, ProcedureCode.SUBSCRIPTION),
    SubscriptionFailure: (PduClass.UNSUCCESSFUL, ProcedureCode.SUBSCRIPTION),
    SubscriptionDeleteRequest: (PduClass.INITIATING, ProcedureCode.SUBSCRIPTION_DELETE),
    SubscriptionDeleteResponse: (PduClass.SUCCESSFUL, ProcedureCode.SUBSCRIPTION_DELETE),
}

_BODY_BY_HEADER = {v: k for k, v in CODE_TABLE.items()}


@dataclass(frozen=True)
class E2apPdu:
    pdu_class: PduClass
    procedure_code: int
    body: Body

    @staticmethod
    def wrap(body: Body) -> "E2apPdu":
        """Build a PDU with class and code taken from the code table."""
        cls_, code = CODE_TABLE[type(body)]
        return E2apPdu(cls_, int(code), body)


# --- field tags -------------------------------------------------------------

class Tag(IntEnum):
    RIC_REQUESTOR_ID = 1
    RIC_INSTANCE_ID = 2
    RAN_FUNCTION_ID = 3
    RIC_ACTION_ID = 4
    RIC_ACTION_TYPE = 5
    RIC_ACTION_DEFINITION = 6
    RIC_SUBSEQUENT_TYPE = 7
    RIC_TIME_TO_WAIT = 8
    RIC_EVENT_TRIGGER = 9
    RIC_INDICATION_SN = 10
    RIC_INDICATION_TYPE = 11
    RIC_INDICATION_HEADER = 12
    RIC_INDICATION_MESSAGE = 13
    RIC_CALL_PROCESS_ID = 14
    RIC_CONTROL_HEADER = 15
    RIC_CONTROL_MESSAGE = 16
    RIC_CONTROL_ACK_REQUEST = 17
    RIC_CONTROL_OUTCOME = 18
    CAUSE_KIND = 19
    CAUSE_TEXT = 20
    NODE_ID = 21
    FUNCTION_ITEM = 22
    FUNCTION_NAME = 23
    FUNCTION_REVISION = 24
    FUNCTION_DEFINITION = 25
    FUNCTIONS = 26
    ACCEPTED_IDS = 27
    REJECTED_IDS = 28
    ADMITTED_ACTION_IDS = 29
    REJECTED_ACTION_IDS = 30
    ACTION_ITEM = 31
    ACTIONS = 32
    ADDED_FUNCTIONS = 33
    MODIFIED_FUNCTIONS = 34
    DELETED_FUNCTION_IDS = 35


def _check_u32(name: str, value: int) -> None:
    if not isinstance(value, int) or not 0 <= value <= U32_MAX:
        raise InvariantViolation(f"{name} {value!r} outside 32-bit unsigned range")


def _check_opaque(name: str, value: bytes) -> None:
    if len(value) > MAX_OPAQUE:
        raise InvariantViolation(f"{name} length {len(value)} exceeds {MAX_OPAQUE}")


# --- TLV writer/reader -------------------------------------------------------

class _Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def tlv(self, tag: Tag, value: bytes) -> None:
        if len(value) > MAX_OPAQUE:
            raise InvariantViolation(f"field {tag.name} length {len(value)} exceeds {MAX_OPAQUE}")
        self.parts.append(bytes([tag]) + len(value).to_bytes(3, "big") + value)

    def u32(self, tag: Tag, value: int) -> None:
        _check_u32(tag.name, value)
        self.tlv(tag, value.to_bytes(4, "big"))

    def u8(self, tag: Tag, value: int) -> None:
        self.tlv(tag, bytes([value]))

    def text(self, tag: Tag, value: str) -> None:
        self.tlv(tag, value.encode("utf-8"))

    def u32_list(self, tag: Tag, values: tuple[int, ...]) -> None:
        for v in values:
            _check_u32(tag.name, v)
        self.tlv(tag, b"".join(v.to_bytes(4, "big") for v in values))

    def done(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def peek_tag(self) -> Optional[int]:
        if self.at_end():
            return None
        return self.data[self.pos]

    def tlv(self, tag: Tag) -> bytes:
        if self.pos + 4 > len(self.data):
            raise MalformedFrame(f"truncated TLV header at offset {self.pos}")
        got = self.data[self.pos]
        if got != tag:
            raise MalformedFrame(f"expected tag {tag.name} ({int(tag)}), got {got} at offset {self.pos}")
        length = int.from_bytes(self.data[self.pos + 1:self.pos + 4], "big")
        start = self.pos + 4
        if start + length > len(self.data):
            raise MalformedFrame(f"TLV {tag.name} overruns frame (length {length})")
        self.pos = start + length
        return self.data[start:start + length]

    def u32(self, tag: Tag) -> int:
        raw = self.tlv(tag)
        if len(raw) != 4:
            raise MalformedFrame(f"{tag.name} value must be 4 bytes, got {len(raw)}")
        return int.from_bytes(raw, "big")

    def u8(self, tag: Tag) -> int:
        raw = self.tlv(tag)
        if len(raw) != 1:
            raise MalformedFrame(f"{tag.name} value must be 1 byte, got {len(raw)}")
        return raw[0]

    def text(self, tag: Tag) -> str:
        try:
            return self.tlv(tag).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"{tag.name} not valid UTF-8: {exc}") from exc

    def u32_list(self, tag: Tag) -> tuple[int, ...]:
        raw = self.tlv(tag)
        if len(raw) % 4:
            raise MalformedFrame(f"{tag.name} list length {len(raw)} not a multiple of 4")
        return tuple(int.from_bytes(raw[i:i + 4], "big") for i in range(0, len(raw), 4))


def _enum(kind, value: int, name: str):
    try:
        return kind(value)
    except ValueError:
        raise MalformedFrame(f"{name} value {value} not a valid {kind.__name__}") from None


# --- per-structure encode/decode ---------------------------------------------

def _put_request_id(w: _Writer, rid: RicRequestId) -> None:
    rid.check()
    w.u32(Tag.RIC_REQUESTOR_ID, rid.requestor_id)
    w.u32(Tag.RIC_INSTANCE_ID, rid.instance_id)


def _get_request_id(r: _Reader) -> RicRequestId:
    return RicRequestId(r.u32(Tag.RIC_REQUESTOR_ID), r.u32(Tag.RIC_INSTANCE_ID))


def _put_cause(w: _Writer, cause: Cause) -> None:
    w.u8(Tag.CAUSE_KIND, int(cause.kind))
    w.text(Tag.CAUSE_TEXT, cause.text)


def _get_cause(r: _Reader) -> Cause:
    return Cause(_enum(CauseKind, r.u8(Tag.CAUSE_KIND), "cause"), r.text(Tag.CAUSE_TEXT))


def _function_bytes(fn: RanFunction) -> bytes:
    fn.check()
    w = _Writer()
    w.u32(Tag.RAN_FUNCTION_ID, fn.function_id)
    w.text(Tag.FUNCTION_NAME, fn.name)
    w.u32(Tag.FUNCTION_REVISION, fn.revision)
    w.tlv(Tag.FUNCTION_DEFINITION, fn.definition)
    return w.done()


def _parse_function(raw: bytes) -> RanFunction:
    r = _Reader(raw)
    fn = RanFunction(
        function_id=r.u32(Tag.RAN_FUNCTION_ID),
        name=r.text(Tag.FUNCTION_NAME),
        revision=r.u32(Tag.FUNCTION_REVISION),
        definition=r.tlv(Tag.FUNCTION_DEFINITION),
    )
    if not r.at_end():
        raise MalformedFrame("trailing bytes inside RANfunction item")
    return fn


def _put_functions(w: _Writer, tag: Tag, fns: tuple[RanFunction, ...]) -> None:
    ids = [fn.function_id for fn in fns]
    if len(ids) != len(set(ids)):
        raise InvariantViolation("duplicate RANfunctionID in function list")
    inner = _Writer()
    for fn in fns:
        inner.tlv(Tag.FUNCTION_ITEM, _function_bytes(fn))
    w.tlv(tag, inner.done())


def _get_functions(r: _Reader, tag: Tag) -> tuple[RanFunction, ...]:
    inner = _Reader(r.tlv(tag))
    fns = []
    while not inner.at_end():
        fns.append(_parse_function(inner.tlv(Tag.FUNCTION_ITEM)))
    return tuple(fns)


def _action_bytes(action: RicAction) -> bytes:
    action.check()
    w = _Writer()
    w.u32(Tag.RIC_ACTION_ID, action.action_id)
    w.u8(Tag.RIC_ACTION_TYPE, int(action.action_type))
    w.tlv(Tag.RIC_ACTION_DEFINITION, action.definition)
    if action.subsequent is not None:
        w.u8(Tag.RIC_SUBSEQUENT_TYPE, int(action.subsequent.kind))
        w.u8(Tag.RIC_TIME_TO_WAIT, int(action.subsequent.time_to_wait))
    return w.done()


def _parse_action(raw: bytes) -> RicAction:
    r = _Reader(raw)
    action_id = r.u32(Tag.RIC_ACTION_ID)
    action_type = _enum(ActionType, r.u8(Tag.RIC_ACTION_TYPE), "ricActionType")
    definition = r.tlv(Tag.RIC_ACTION_DEFINITION)
    subsequent = None
    if r.peek_tag() == Tag.RIC_SUBSEQUENT_TYPE:
        kind = _enum(SubsequentType, r.u8(Tag.RIC_SUBSEQUENT_TYPE), "ricSubsequentActionType")
        ttw = _enum(TimeToWait, r.u8(Tag.RIC_TIME_TO_WAIT), "ricTimeToWait")
        subsequent = SubsequentAction(kind, ttw)
    if not r.at_end():
        raise MalformedFrame("trailing bytes inside RICaction item")
    action = RicAction(action_id, action_type, definition, subsequent)
    action.check()
    return action


def _put_actions(w: _Writer, actions: tuple[RicAction, ...]) -> None:
    ids = [a.action_id for a in actions]
    if len(ids) != len(set(ids)):
        raise InvariantViolation("duplicate ricActionID in subscription")
    inner = _Writer()
    for a in actions:
        inner.tlv(Tag.ACTION_ITEM, _action_bytes(a))
    w.tlv(Tag.ACTIONS, inner.done())


def _get_actions(r: _Reader) -> tuple[RicAction, ...]:
    inner = _Reader(r.tlv(Tag.ACTIONS))
    actions = []
    while not inner.at_end():
        actions.append(_parse_action(inner.tlv(Tag.ACTION_ITEM)))
    ids = [a.action_id for a in actions]
    if len(ids) != len(set(ids)):
        raise InvariantViolation("duplicate ricActionID in subscription")
    return tuple(actions)


# --- body encoders/decoders ---------------------------------------------------

def _encode_body(body: Body) -> bytes:
    w = _Writer()
    if isinstance(body, SetupRequest):
        w.text(Tag.NODE_ID, body.node_id)
        _put_functions(w, Tag.FUNCTIONS, tuple(body.functions))
    elif isinstance(body, SetupResponse):
        w.u32_list(Tag.ACCEPTED_IDS, tuple(body.accepted_ids))
        w.u32_list(Tag.REJECTED_IDS, tuple(body.rejected_ids))
    elif isinstance(body, SubscriptionRequest):
        _put_request_id(w, body.request_id)
        w.u32(Tag.RAN_FUNCTION_ID, body.function_id)
        w.tlv(Tag.RIC_EVENT_TRIGGER, body.event_trigger)
        _put_actions(w, tuple(body.actions))
    elif isinstance(body, SubscriptionResponse):
        _put_request_id(w, body.request_id)
        w.u32_list(Tag.ADMITTED_ACTION_IDS, tuple(body.admitted_action_ids))
        w.u32_list(Tag.REJECTED_ACTION_IDS, tuple(body.rejected_action_ids))
    elif isinstance(body, SubscriptionFailure):
        _put_request_id(w, body.request_id)
        _put_cause(w, body.cause)
    elif isinstance(body, SubscriptionDeleteRequest):
        _put_request_id(w, body.request_id)
        w.u32(Tag.RAN_FUNCTION_ID, body.function_id)
    elif isinstance(body, SubscriptionDeleteResponse):
        _put_request_id(w, body.request_id)
    elif isinstance(body, Indication):
        if body.indication_type == IndicationType.INSERT and body.call_process_id is None:
            raise InvariantViolation("insert indication must carry RICcallProcessID")
        _put_request_id(w, body.request_id)
        w.u32(Tag.RAN_FUNCTION_ID, body.function_id)
        w.u32(Tag.RIC_ACTION_ID, body.action_id)
        if body.sequence_number is not None:
            w.u32(Tag.RIC_INDICATION_SN, body.sequence_number)
        w.u8(Tag.RIC_INDICATION_TYPE, int(body.indication_type))
        w.tlv(Tag.RIC_INDICATION_HEADER, body.header)
        w.tlv(Tag.RIC_INDICATION_MESSAGE, body.message)
        if body.call_process_id is not None:
            w.tlv(Tag.RIC_CALL_PROCESS_ID, body.call_process_id)
    elif isinstance(body, ControlRequest):
        _put_request_id(w, body.request_id)
        w.u32(Tag.RAN_FUNCTION_ID, body.function_id)
        if body.call_process_id is not None:
            w.tlv(Tag.RIC_CALL_PROCESS_ID, body.call_process_id)
        w.tlv(Tag.RIC_CONTROL_HEADER, body.header)
        w.tlv(Tag.RIC_CONTROL_MESSAGE, body.message)
        w.u8(Tag.RIC_CONTROL_ACK_REQUEST, 1 if body.ack_requested else 0)
    elif isinstance(body, ControlAcknowledge):
        _put_request_id(w, body.request_id)
        w.tlv(Tag.RIC_CONTROL_OUTCOME, body.outcome)
    elif isinstance(body, ControlFailure):
        _put_request_id(w, body.request_id)
        _put_cause(w, body.cause)
    elif isinstance(body, ServiceUpdate):
        _put_functions(w, Tag.ADDED_FUNCTIONS, tuple(body.added))
        _put_functions(w, Tag.MODIFIED_FUNCTIONS, tuple(body.modified))
        w.u32_list(Tag.DELETED_FUNCTION_IDS, tuple(body.deleted_ids))
    elif isinstance(body, ServiceUpdateAck):
        w.u32_list(Tag.ACCEPTED_IDS, tuple(body.accepted_ids))
        w.u32_list(Tag.REJECTED_IDS, tuple(body.rejected_ids))
    elif isinstance(body, ErrorIndication):
        _put_cause(w, body.cause)
    else:
        raise InvariantViolation(f"unknown body type {type(body).__name__}")
    return w.done()


def _decode_body(body_type: type, r: _Reader) -> Body:
    if body_type is SetupRequest:
        return SetupRequest(r.text(Tag.NODE_ID), _get_functions(r, Tag.FUNCTIONS))
    if body_type is SetupResponse:
        return SetupResponse(r.u32_list(Tag.ACCEPTED_IDS), r.u32_list(Tag.REJECTED_IDS))
    if body_type is SubscriptionRequest:
        return SubscriptionRequest(
            _get_request_id(r), r.u32(Tag.RAN_FUNCTION_ID),
            r.tlv(Tag.RIC_EVENT_TRIGGER), _get_actions(r))
    if body_type is SubscriptionResponse:
        return SubscriptionResponse(
            _get_request_id(r), r.u32_list(Tag.ADMITTED_ACTION_IDS),
            r.u32_list(Tag.REJECTED_ACTION_IDS))
    if body_type is SubscriptionFailure:
        return SubscriptionFailure(_get_request_id(r), _get_cause(r))
    if body_type is SubscriptionDeleteRequest:
        return SubscriptionDeleteRequest(_get_request_id(r), r.u32(Tag.RAN_FUNCTION_ID))
    if body_type is SubscriptionDeleteResponse:
        return SubscriptionDeleteResponse(_get_request_id(r))
    if body_type is Indication:
        request_id = _get_request_id(r)
        function_id = r.u32(Tag.RAN_FUNCTION_ID)
        action_id = r.u32(Tag.RIC_ACTION_ID)
        sequence = r.u32(Tag.RIC_INDICATION_SN) if r.peek_tag() == Tag.RIC_INDICATION_SN else None
        ind_type = _enum(IndicationType, r.u8(Tag.RIC_INDICATION_TYPE), "RICindicationType")
        header = r.tlv(Tag.RIC_INDICATION_HEADER)
        message = r.tlv(Tag.RIC_INDICATION_MESSAGE)
        call_pid = r.tlv(Tag.RIC_CALL_PROCESS_ID) if r.peek_tag() == Tag.RIC_CALL_PROCESS_ID else None
        if ind_type == IndicationType.INSERT and call_pid is None:
            raise InvariantViolation("insert indication must carry RICcallProcessID")
        return Indication(request_id, function_id, action_id, ind_type,
                          header, message, sequence, call_pid)
    if body_type is ControlRequest:
        request_id = _get_request_id(r)
        function_id = r.u32(Tag.RAN_FUNCTION_ID)
        call_pid = r.tlv(Tag.RIC_CALL_PROCESS_ID) if r.peek_tag() == Tag.RIC_CALL_PROCESS_ID else None
        header = r.tlv(Tag.RIC_CONTROL_HEADER)
        message = r.tlv(Tag.RIC_CONTROL_MESSAGE)
        ack = r.u8(Tag.RIC_CONTROL_ACK_REQUEST) != 0
        return ControlRequest(request_id, function_id, header, message, call_pid, ack)
    if body_type is ControlAcknowledge:
        return ControlAcknowledge(_get_request_id(r), r.tlv(Tag.RIC_CONTROL_OUTCOME))
    if body_type is ControlFailure:
        return ControlFailure(_get_request_id(r), _get_cause(r))
    if body_type is ServiceUpdate:
        return ServiceUpdate(
            _get_functions(r, Tag.ADDED_FUNCTIONS),
            _get_functions(r, Tag.MODIFIED_FUNCTIONS),
            r.u32_list(Tag.DELETED_FUNCTION_IDS))
    if body_type is ServiceUpdateAck:
        return ServiceUpdateAck(r.u32_list(Tag.ACCEPTED_IDS), r.u32_list(Tag.REJECTED_IDS))
    if body_type is ErrorIndication:
        return ErrorIndication(_get_cause(r))
    raise InvariantViolation(f"no decoder for {body_type.__name__}")


# --- public API ---------------------------------------------------------------

def encode(pdu: E2apPdu) -> bytes:
    """Encode a PDU to its canonical byte form.

    Raises InvariantViolation if the class/code pair disagrees with the
    body variant, or any field breaks a type invariant.
    """
    expected = CODE_TABLE.get(type(pdu.body))
    if expected is None:
        raise InvariantViolation(f"unencodable body type {type(pdu.body).__name__}")
    if (pdu.pdu_class, pdu.procedure_code) != (expected[0], int(expected[1])):
        raise InvariantViolation(
            f"{type(pdu.body).__name__} requires class={expected[0].name} "
            f"code={int(expected[1])}, got class={pdu.pdu_class} code={pdu.procedure_code}")
    header = struct.pack(">BBH", VERSION, int(pdu.pdu_class), pdu.procedure_code)
    return header + _encode_body(pdu.body)


def decode(data: bytes) -> E2apPdu:
    """Exact inverse of encode; rejects anything not produced by it."""
    if len(data) < 4:
        raise MalformedFrame(f"frame too short ({len(data)} bytes)")
    version, class_byte, code = struct.unpack(">BBH", data[:4])
    if version != VERSION:
        raise MalformedFrame(f"unsupported version byte 0x{version:02x}")
    if class_byte not in (0, 1, 2):
        raise MalformedFrame(f"invalid pdu class byte {class_byte}")
    pdu_class = PduClass(class_byte)
    try:
        proc = ProcedureCode(code)
    except ValueError:
        raise UnknownProcedureCode(f"procedure code {code} not in code table") from None
    body_type = _BODY_BY_HEADER.get((pdu_class, proc))
    if body_type is None:
        raise InvariantViolation(f"no message with class={pdu_class.name} code={code}")
    r = _Reader(data[4:])
    body = _decode_body(body_type, r)
    if not r.at_end():
        raise MalformedFrame(f"trailing bytes after body (offset {4 + r.pos})")
    return E2apPdu(pdu_class, code, body)


# --- debug rendering ----------------------------------------------------------

_BODY_NAMES = {
    SetupRequest: "E2setupRequest",
    SetupResponse: "E2setupResponse",
    SubscriptionRequest: "RICsubscriptionRequest",
    SubscriptionResponse: "RICsubscriptionResponse",
    SubscriptionFailure: "RICsubscriptionFailure",
    SubscriptionDeleteRequest: "RICsubscriptionDeleteRequest",
    SubscriptionDeleteResponse: "RICsubscriptionDeleteResponse",
    Indication: "RICindication",
    ControlRequest: "RICcontrolRequest",
    ControlAcknowledge: "RICcontrolAcknowledge",
    ControlFailure: "RICcontrolFailure",
    ServiceUpdate: "RICserviceUpdate",
    ServiceUpdateAck: "RICserviceUpdateAcknowledge",
    ErrorIndication: "ErrorIndication",
}


def _hex(data: bytes) -> str:
    return "0x" + data.hex() if data else "(empty)"


class _Lines:
    def __init__(self) -> None:
        self.out: list[str] = []

    def add(self, depth: int, text: str) -> None:
        self.out.append("  " * depth + text)


def _render_request_id(ls: _Lines, d: int, rid: RicRequestId) -> None:
    ls.add(d, "RICrequestID")
    ls.add(d + 1, f"ricRequestorID: {rid.requestor_id}")
    ls.add(d + 1, f"ricInstanceID: {rid.instance_id}")


def _render_cause(ls: _Lines, d: int, cause: Cause) -> None:
    ls.add(d, f"cause: {cause.kind.name.lower()}" + (f" ({cause.text})" if cause.text else ""))


def _render_functions(ls: _Lines, d: int, label: str, fns: tuple[RanFunction, ...]) -> None:
    if not fns:
        ls.add(d, f"{label}: []")
        return
    ls.add(d, label)
    for fn in fns:
        ls.add(d + 1, "RANfunction-Item")
        ls.add(d + 2, f"RANfunctionID: {fn.function_id}")
        ls.add(d + 2, f"ranFunctionName: {fn.name}")
        ls.add(d + 2, f"ranFunctionRevision: {fn.revision}")
        ls.add(d + 2, f"ranFunctionDefinition: {_hex(fn.definition)}")


def _render_id_list(ls: _Lines, d: int, label: str, ids: tuple[int, ...]) -> None:
    ls.add(d, f"{label}: [{', '.join(str(i) for i in ids)}]")


def render_debug(pdu: E2apPdu) -> str:
    """Human-readable, line-oriented rendering of a PDU.

    Field names follow the E2AP listing conventions (ricRequestorID,
    RANfunctionID, ricTimeToWait, ...) so wire captures diff cleanly
    against reference traces.
    """
    ls = _Lines()
    ls.add(0, "E2AP-PDU")
    ls.add(1, f"pduClass: {pdu.pdu_class.render()}")
    ls.add(1, f"procedureCode: {pdu.procedure_code}")
    body = pdu.body
    ls.add(1, _BODY_NAMES[type(body)])
    d = 2
    if isinstance(body, SetupRequest):
        ls.add(d, f"nodeID: {body.node_id}")
        _render_functions(ls, d, "functions", tuple(body.functions))
    elif isinstance(body, SetupResponse):
        _render_id_list(ls, d, "acceptedIDs", tuple(body.accepted_ids))
        _render_id_list(ls, d, "rejectedIDs", tuple(body.rejected_ids))
    elif isinstance(body, SubscriptionRequest):
        _render_request_id(ls, d, body.request_id)
        ls.add(d, f"RANfunctionID: {body.function_id}")
        ls.add(d, f"ricEventTriggerDefinition: {_hex(body.event_trigger)}")
        ls.add(d, "ricAction-ToBeSetup-List")
        for action in body.actions:
            ls.add(d + 1, "RICaction-ToBeSetup-Item")
            ls.add(d + 2, f"ricActionID: {action.action_id}")
            ls.add(d + 2, f"ricActionType: {action.action_type.name.lower()}")
            ls.add(d + 2, f"ricActionDefinition: {_hex(action.definition)}")
            if action.subsequent is not None:
                ls.add(d + 2, "ricSubsequentAction")
                ls.add(d + 3, f"ricSubsequentActionType: {action.subsequent.kind.name.lower()}")
                ls.add(d + 3, f"ricTimeToWait: {action.subsequent.time_to_wait.render()}")
    elif isinstance(body, SubscriptionResponse):
        _render_request_id(ls, d, body.request_id)
        _render_id_list(ls, d, "admittedActionIDs", tuple(body.admitted_action_ids))
        _render_id_list(ls, d, "rejectedActionIDs", tuple(body.rejected_action_ids))
    elif isinstance(body, SubscriptionFailure):
        _render_request_id(ls, d, body.request_id)
        _render_cause(ls, d, body.cause)
    elif isinstance(body, SubscriptionDeleteRequest):
        _render_request_id(ls, d, body.request_id)
        ls.add(d, f"RANfunctionID: {body.function_id}")
    elif isinstance(body, SubscriptionDeleteResponse):
        _render_request_id(ls, d, body.request_id)
    elif isinstance(body, Indication):
        _render_request_id(ls, d, body.request_id)
        ls.add(d, f"RANfunctionID: {body.function_id}")
        ls.add(d, f"ricActionID: {body.action_id}")
        if body.sequence_number is not None:
            ls.add(d, f"RICindicationSN: {body.sequence_number}")
        ls.add(d, f"RICindicationType: {body.indication_type.name.lower()}")
        ls.add(d, f"RICindicationHeader: {_hex(body.header)}")
        ls.add(d, f"RICindicationMessage: {_hex(body.message)}")
        if body.call_process_id is not None:
            ls.add(d, f"RICcallProcessID: {_hex(body.call_process_id)}")
    elif isinstance(body, ControlRequest):
        _render_request_id(ls, d, body.request_id)
        ls.add(d, f"RANfunctionID: {body.function_id}")
        if body.call_process_id is not None:
            ls.add(d, f"RICcallProcessID: {_hex(body.call_process_id)}")
        ls.add(d, f"RICcontrolHeader: {_hex(body.header)}")
        ls.add(d, f"RICcontrolMessage: {_hex(body.message)}")
        ls.add(d, f"RICcontrolAckRequest: {'ack' if body.ack_requested else 'noAck'}")
    elif isinstance(body, ControlAcknowledge):
        _render_request_id(ls, d, body.request_id)
        ls.add(d, f"RICcontrolOutcome: {_hex(body.outcome)}")
    elif isinstance(body, ControlFailure):
        _render_request_id(ls, d, body.request_id)
        _render_cause(ls, d, body.cause)
    elif isinstance(body, ServiceUpdate):
        _render_functions(ls, d, "addedFunctions", tuple(body.added))
        _render_functions(ls, d, "modifiedFunctions", tuple(body.modified))
        _render_id_list(ls, d, "deletedFunctionIDs", tuple(body.deleted_ids))
    elif isinstance(body, ServiceUpdateAck):
        _render_id_list(ls, d, "acceptedIDs", tuple(body.accepted_ids))
        _render_id_list(ls, d, "rejectedIDs", tuple(body.rejected_ids))
    elif isinstance(body, ErrorIndication):
        _render_cause(ls, d, body.cause)
    return "\n".join(ls.out) + "\n"
