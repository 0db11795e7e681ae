"""Non-RT RIC / SMO-lite.

Owns the A1 policy lifecycle (create/update/delete/query with schema
validation and async enforcement feedback), the enrichment-information
service with strictly-increasing epochs, a traffic-forecasting rApp fed
from O1 PM files, and minimal O1: heartbeat availability tracking plus
bulk PM file collection keyed (node, interval) for idempotent replay.

A1 rides as one JSON object per frame over the framed transport; the
harness supplies the send callable and feeds feedback frames back in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    DuplicateId, MissingFile, SchemaViolation, StaleEpoch, UnknownId,
    UnknownTopic,
)
from .ric import validate_policy
from .errors import MalformedPolicy, UnknownPolicyType


@dataclass(frozen=True)
class EnrichmentMessage:
    topic: str
    producer: str
    epoch: int
    payload: dict


@dataclass
class HeartbeatRecord:
    node_id: str
    period_ms: int
    last_beat_ms: int = 0
    state: str = "available"


class PolicyStore:
    """A1 policy lifecycle on the non-RT side; pushes changes to the
    near-RT RIC and records enforcement feedback."""

    def __init__(self, a1_send: Callable[[bytes], None]):
        self._send = a1_send
        self.policies: dict[str, dict] = {}
        self.feedback: dict[str, dict] = {}
        self.feedback_log: list[dict] = []

    def create(self, policy_msg: dict) -> dict:
        policy = self._validate(policy_msg)
        if policy["policy_id"] in self.policies:
            raise DuplicateId(f"policy {policy['policy_id']} already exists")
        self.policies[policy["policy_id"]] = policy
        self._push("create", policy)
        return policy

    def update(self, policy_msg: dict) -> dict:
        policy = self._validate(policy_msg)
        if policy["policy_id"] not in self.policies:
            raise UnknownId(f"policy {policy['policy_id']} does not exist")
        self.policies[policy["policy_id"]] = policy
        self._push("update", policy)
        return policy

    def delete(self, policy_id: str) -> None:
        if policy_id not in self.policies:
            raise UnknownId(f"policy {policy_id} does not exist")
        del self.policies[policy_id]
        self._send(json.dumps({"op": "delete", "policy_id": policy_id},
                              sort_keys=True).encode())

    def query(self, policy_id: Optional[str] = None):
        if policy_id is None:
            return [self.policies[k] for k in sorted(self.policies)]
        if policy_id not in self.policies:
            raise UnknownId(f"policy {policy_id} does not exist")
        return self.policies[policy_id]

    @staticmethod
    def _validate(policy_msg: dict) -> dict:
        try:
            return validate_policy(policy_msg)
        except (MalformedPolicy, UnknownPolicyType) as exc:
            raise SchemaViolation(str(exc)) from exc

    def _push(self, op: str, policy: dict) -> None:
        self._send(json.dumps({"op": op, **policy}, sort_keys=True).encode())

    def handle_feedback(self, frame: bytes) -> dict:
        msg = json.loads(frame.decode("utf-8"))
        if "policy_id" in msg and "enforced" in msg:
            self.feedback[msg["policy_id"]] = msg
            self.feedback_log.append(msg)
        return msg


class EiService:
    """Enrichment-information transfer with per-(topic, producer) epochs."""

    def __init__(self, a1_send: Callable[[bytes], None]):
        self._send = a1_send
        self.topics: set[str] = set()
        self.last_epoch: dict[tuple[str, str], int] = {}

    def register_topic(self, topic: str) -> None:
        self.topics.add(topic)

    def publish(self, message: EnrichmentMessage) -> None:
        if message.topic not in self.topics:
            raise UnknownTopic(f"topic {message.topic!r} not registered")
        key = (message.topic, message.producer)
        last = self.last_epoch.get(key)
        if last is not None and message.epoch <= last:
            raise StaleEpoch(
                f"epoch {message.epoch} not greater than {last} for {key}")
        self.last_epoch[key] = message.epoch
        self._send(json.dumps({
            "op": "ei", "topic": message.topic, "producer": message.producer,
            "epoch": message.epoch, "payload": message.payload,
        }, sort_keys=True).encode())


class ForecastRapp:
    """rApp X: per-slice demand forecast = arithmetic mean of the last W
    PM-derived samples, emitted every horizon as enrichment information."""

    def __init__(self, ei: EiService, window: int = 5, horizon_ms: int = 1000,
                 topic: str = "forecast", producer: str = "rapp-x"):
        self.ei = ei
        self.window = window
        self.horizon_ms = horizon_ms
        self.topic = topic
        self.producer = producer
        self.samples: dict[str, list[float]] = {}
        self._epoch = 0
        self._next_emit = horizon_ms
        ei.register_topic(topic)

    def add_sample(self, slice_id: str, demand_prb: float) -> None:
        self.samples.setdefault(slice_id, []).append(demand_prb)

    def ingest_pm_rows(self, rows: list[dict], interval_ms: int) -> None:
        """Extract per-slice demand (mean PRBs per tick) from PM rows."""
        per_slice: dict[str, float] = {}
        for row in rows:
            if row["metric"] == "prb_requested":
                per_slice[row["slice"]] = per_slice.get(row["slice"], 0.0) + row["value"]
        for slice_id, total in sorted(per_slice.items()):
            self.add_sample(slice_id, total / max(interval_ms, 1))

    def forecast(self) -> tuple[dict[str, float], bool]:
        """(per-slice forecast, low_confidence). Empty data forecasts zero."""
        if not any(self.samples.values()):
            return {}, True
        out = {}
        for slice_id in sorted(self.samples):
            tail = self.samples[slice_id][-self.window:]
            out[slice_id] = sum(tail) / len(tail) if tail else 0.0
        return out, False

    def advance_to(self, now_ms: int) -> None:
        while self._next_emit <= now_ms:
            at = self._next_emit
            self._next_emit += self.horizon_ms
            slices, low_confidence = self.forecast()
            self._epoch += 1
            self.ei.publish(EnrichmentMessage(
                self.topic, self.producer, self._epoch, {
                    "slices": {s: round(v, 6) for s, v in slices.items()},
                    "low_confidence": low_confidence,
                    "at_ms": at,
                }))


class HeartbeatMonitor:
    """Availability per node: unavailable once now - last_beat exceeds
    three periods; recovery on the next beat."""

    def __init__(self) -> None:
        self.records: dict[str, HeartbeatRecord] = {}
        self.transitions: list[tuple[str, str, int]] = []

    def register(self, node_id: str, period_ms: int, now_ms: int = 0) -> None:
        self.records[node_id] = HeartbeatRecord(node_id, period_ms, now_ms)

    def beat(self, node_id: str, at_ms: int) -> None:
        record = self.records[node_id]
        record.last_beat_ms = at_ms
        if record.state != "available":
            record.state = "available"
            self.transitions.append((node_id, "available", at_ms))

    def evaluate(self, now_ms: int) -> None:
        for node_id in sorted(self.records):
            record = self.records[node_id]
            overdue = now_ms - record.last_beat_ms > 3 * record.period_ms
            if overdue and record.state == "available":
                record.state = "unavailable"
                self.transitions.append((node_id, "unavailable", now_ms))

    def state(self, node_id: str) -> str:
        return self.records[node_id].state


class PmCollector:
    """Bulk performance-file collection: a file-ready notification names a
    (node, interval); the blob is fetched into the SMO store exactly once."""

    def __init__(self, fetcher: Callable[[str, int], Optional[bytes]]):
        self._fetch = fetcher
        self.files: dict[tuple[str, int], bytes] = {}

    def on_file_ready(self, node_id: str, interval: int) -> bool:
        """Returns True if a new file was stored (False on replay)."""
        key = (node_id, interval)
        if key in self.files:
            return False
        blob = self._fetch(node_id, interval)
        if blob is None:
            raise MissingFile(f"no PM blob for node {node_id} interval {interval}")
        self.files[key] = blob
        return True

    def file_count(self) -> int:
        return len(self.files)

    def rows(self) -> list[dict]:
        """All collected PM rows, parsed, in (node, interval, row) order."""
        out = []
        for key in sorted(self.files):
            text = self.files[key].decode("utf-8")
            lines = text.splitlines()
            for line in lines[1:]:
                t, node, cell, slc, metric, value = line.split(",")
                out.append({"time_ms": int(t), "node": node, "cell": int(cell),
                            "slice": slc, "metric": metric, "value": float(value)})
        return out


@dataclass
class NonRtConfig:
    forecast_enabled: bool = True
    forecast_window: int = 5
    forecast_horizon_ms: int = 1000
    pm_interval_ms: int = 1000


class NonRtRic:
    """Bundles the SMO-side services and drives them in simulated time."""

    def __init__(self, a1_send: Callable[[bytes], None],
                 pm_fetcher: Callable[[str, int], Optional[bytes]],
                 config: NonRtConfig = NonRtConfig()):
        self.config = config
        self.policy_store = PolicyStore(a1_send)
        self.ei = EiService(a1_send)
        self.rapp: Optional[ForecastRapp] = None
        if config.forecast_enabled:
            self.rapp = ForecastRapp(self.ei, config.forecast_window,
                                     config.forecast_horizon_ms)
        self.heartbeats = HeartbeatMonitor()
        self.pm = PmCollector(pm_fetcher)

    def handle_o1_event(self, event: dict) -> None:
        if event["kind"] == "heartbeat":
            node = event["node"]
            if node not in self.heartbeats.records:
                self.heartbeats.register(node, 1000, event["at_ms"])
            self.heartbeats.beat(node, event["at_ms"])
        elif event["kind"] == "pm_file_ready":
            fresh = self.pm.on_file_ready(event["node"], event["interval"])
            if fresh and self.rapp is not None:
                blob = self.pm.files[(event["node"], event["interval"])]
                rows = []
                for line in blob.decode("utf-8").splitlines()[1:]:
                    t, node, cell, slc, metric, value = line.split(",")
                    rows.append({"slice": slc, "metric": metric, "value": float(value)})
                self.rapp.ingest_pm_rows(rows, self.config.pm_interval_ms)

    def advance_to(self, now_ms: int) -> None:
        self.heartbeats.evaluate(now_ms)
        if self.rapp is not None:
            self.rapp.advance_to(now_ms)

    def handle_a1_feedback(self, frame: bytes) -> dict:
        return self.policy_store.handle_feedback(frame)
