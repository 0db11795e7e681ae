"""Exception taxonomy shared across the stack.

Every error raised by oranlab derives from OranError so callers can catch
the whole family. Grouping mirrors the subsystem boundaries: codec,
service models, transport, RIC platform, simulator, non-RT RIC, ML
pipeline, and harness.
"""

from __future__ import annotations


class OranError(Exception):
    """Base class for all oranlab errors."""


# --- codec ---------------------------------------------------------------

class InvariantViolation(OranError):
    """A value breaks a declared type invariant (bad code/body pairing,
    oversize payload, out-of-range field)."""


class MalformedFrame(OranError):
    """Byte stream is not a valid encoding: bad version byte, truncation,
    or trailing garbage."""


class UnknownProcedureCode(OranError):
    """Header carries a procedure code outside the fixed code table."""


# --- service models ------------------------------------------------------

class UnknownServiceModel(OranError):
    """Payload prefixed with a model id no service model registered."""


class MalformedPayload(OranError):
    """Service-model payload bytes do not parse."""


class UnsupportedDomain(OranError):
    """Control verb belongs to an RC domain this build does not implement,
    or the xApp does not declare the capability."""


# --- transport -----------------------------------------------------------

class TransportError(OranError):
    pass


class Unreachable(TransportError):
    """No listener at the requested endpoint."""


class Refused(TransportError):
    """Listener exists but rejected the connection."""


class Closed(TransportError):
    """Operation on a connection that has been closed."""


class Oversize(TransportError):
    """Payload exceeds the maximum frame size."""


# --- near-RT RIC ---------------------------------------------------------

class UnknownNode(OranError):
    pass


class UnknownFunction(OranError):
    pass


class WireRejected(OranError):
    """E2 node rejected a wire request; carries the cause text."""


class ConflictRejected(OranError):
    """Pre-action conflict check denied the control; `holder` names the
    xApp holding the lock."""

    def __init__(self, message: str, holder: str):
        super().__init__(message)
        self.holder = holder


class Forbidden(OranError):
    """SDL write into a platform-owned namespace."""


class NotFound(OranError):
    pass


class DuplicateName(OranError):
    pass


class NotOnboarded(OranError):
    pass


class UndeclaredTopic(OranError):
    pass


class UnknownPolicyType(OranError):
    pass


class MalformedPolicy(OranError):
    pass


class InsufficientData(OranError):
    """Post-action verification window holds fewer samples than required."""


# --- simulator -----------------------------------------------------------

class InfeasibleQuota(OranError):
    """Slice PRB quota would exceed the cell capacity."""


class UnknownTarget(OranError):
    """Control names a cell, slice, UE, or tunable the node does not have."""


# --- non-RT RIC ----------------------------------------------------------

class DuplicateId(OranError):
    pass


class UnknownId(OranError):
    pass


class SchemaViolation(OranError):
    """A1 policy does not validate against its registered policy type."""


class UnknownTopic(OranError):
    pass


class StaleEpoch(OranError):
    """Enrichment message epoch not strictly greater than the last one."""


class MissingFile(OranError):
    """File-ready notification without a matching PM blob."""


# --- ML pipeline ---------------------------------------------------------

class EmptyInput(OranError):
    pass


class GridTooLarge(OranError):
    """Training grid exceeds the cell cap; raise the quantization step."""


class NotValidated(OranError):
    pass


class NotPublished(OranError):
    pass


class ImmutableEntry(OranError):
    """Catalog entries cannot be overwritten once published."""


# --- harness -------------------------------------------------------------

class ScenarioInvalid(OranError):
    """Scenario file fails validation; message names the field."""


class MalformedCapture(OranError):
    """Wire capture file is truncated or corrupt; carries byte offset."""
