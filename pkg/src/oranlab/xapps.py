"""xApp framework and the three reference xApps.

* kpm-monitor      collects KPM reports into the SDL, publishes the `kpm`
                   summary topic, and flushes rows to a CSV data sink
* slicing-control  the closed-loop PRB allocator: observed demand plus an
                   optional forecast drive per-slice quota controls, either
                   from a trained policy table or the priority baseline
* scheduling-control  chains on the forecast, the KPM summary, and the
                   slicing profile to pick per-slice intra-slice schedulers

Every xApp is a single-threaded event handler: indications, topic updates,
policy events, and timer ticks arrive serialized from the platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .e2sm import (
    KpmActionDefinition, NodeKind, SchedulerPolicy, Scope, SlicePrbQuota,
    SliceScheduler, metric_catalog,
)
from .errors import ConflictRejected, MalformedPolicy, NotValidated
from .objectives import SLICE_IDS, SlicingObjectives
from .ric import IndicationEvent, XappDescriptor, XappSdk

FORECAST_TOPIC = "forecast"
KPM_TOPIC = "kpm"
SLICING_TOPIC = "slicing_profile"
SCHED_TOPIC = "sched_profile"
POLICY_TOPIC = "policies"

KPM_CSV_HEADER = "time_ms,node,cell,slice,metric,value"


class Xapp:
    """Base class; the platform drives the on_* hooks."""

    def __init__(self, descriptor: XappDescriptor):
        self.descriptor = descriptor
        self.sdk: Optional[XappSdk] = None

    @property
    def name(self) -> str:
        return self.descriptor.name

    def on_deploy(self, sdk: XappSdk, descriptor: XappDescriptor) -> None:
        self.sdk = sdk

    def on_start(self) -> None:
        pass

    def on_indication(self, event: IndicationEvent) -> None:
        pass

    def on_topic(self, topic: str, value, epoch: int) -> None:
        pass

    def on_tick(self, now_ms: int) -> None:
        pass

    def on_insert_timeout(self, insert) -> None:
        pass

    def on_subscription_ended(self, key, reason: str) -> None:
        pass

    def on_terminate(self) -> None:
        pass

    def status(self) -> dict:
        return {"name": self.name}


# --- trained policy table -------------------------------------------------------


@dataclass
class PolicyModel:
    """Table policy: quantized per-slice demand -> PRB split.

    Produced by the offline pipeline; the slicing xApp only loads instances
    carrying a validation record (the deployment gate), falling back to the
    baseline allocator on unseen grid cells.
    """

    model_id: str
    slice_ids: tuple[str, ...]
    capacity: int
    quant_step: int = 5
    table: dict[tuple[int, ...], tuple[int, ...]] = field(default_factory=dict)
    dataset_hash: str = ""
    scenarios: tuple[str, ...] = ()
    validation: Optional[dict] = None  # {"pass_rate": float, "scenarios": [...]}

    def check(self) -> None:
        for demand, split in self.table.items():
            if sum(split) > self.capacity:
                raise MalformedPolicy(
                    f"table split {split} for {demand} exceeds capacity {self.capacity}")

    def quantize(self, value: int) -> int:
        step = self.quant_step
        q = ((max(int(value), 0) * 2 + step) // (2 * step)) * step  # round half up
        return min(q, self.capacity)

    def lookup(self, demand: dict[str, int]) -> Optional[dict[str, int]]:
        key = tuple(self.quantize(demand.get(s, 0)) for s in self.slice_ids)
        split = self.table.get(key)
        if split is None:
            return None
        return dict(zip(self.slice_ids, split))

    def to_text(self) -> str:
        lines = [
            f"# model_id={self.model_id}",
            f"# slices={','.join(self.slice_ids)}",
            f"# capacity={self.capacity}",
            f"# step={self.quant_step}",
            f"# dataset={self.dataset_hash}",
            f"# scenarios={','.join(self.scenarios)}",
        ]
        if self.validation is not None:
            lines.append(f"# pass_rate={self.validation['pass_rate']:.6f}")
            lines.append(f"# validated_on={','.join(self.validation['scenarios'])}")
        for key in sorted(self.table):
            split = self.table[key]
            lines.append(" ".join(map(str, key)) + " -> " + " ".join(map(str, split)))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "PolicyModel":
        meta: dict[str, str] = {}
        table: dict[tuple[int, ...], tuple[int, ...]] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            left, _, right = line.partition("->")
            demand = tuple(int(x) for x in left.split())
            split = tuple(int(x) for x in right.split())
            table[demand] = split
        validation = None
        if "pass_rate" in meta:
            validation = {
                "pass_rate": float(meta["pass_rate"]),
                "scenarios": [s for s in meta.get("validated_on", "").split(",") if s],
            }
        model = PolicyModel(
            model_id=meta.get("model_id", ""),
            slice_ids=tuple(meta.get("slices", "").split(",")),
            capacity=int(meta.get("capacity", "0")),
            quant_step=int(meta.get("step", "5")),
            table=table,
            dataset_hash=meta.get("dataset", ""),
            scenarios=tuple(s for s in meta.get("scenarios", "").split(",") if s),
            validation=validation,
        )
        model.check()
        return model


def load_policy_model(path: str) -> PolicyModel:
    """Load a model file, enforcing the deployment gate: no validation
    record, no load."""
    with open(path, "r", encoding="utf-8") as fh:
        model = PolicyModel.from_text(fh.read())
    if model.validation is None:
        raise NotValidated(f"model {model.model_id or path} has no validation record")
    return model


# --- allocation ---------------------------------------------------------------------


def decide_allocation(demand: dict[str, int], capacity: int,
                      objectives: SlicingObjectives,
                      model: Optional[PolicyModel] = None) -> dict[str, int]:
    """Per-slice PRB split for one cell.

    With a model: table lookup on the quantized demand vector, falling back
    to the baseline on unseen cells. Baseline: strict-priority fill, then
    any leftover spread proportionally over unmet demand with the remainder
    to the highest-priority unmet slice.
    """
    if model is not None:
        hit = model.lookup(demand)
        if hit is not None:
            return hit
    order = [s for s in objectives.priority if s in demand]
    order += [s for s in sorted(demand) if s not in order]
    grants = {s: 0 for s in demand}
    remaining = capacity
    for s in order:
        g = min(max(demand[s], 0), remaining)
        grants[s] = g
        remaining -= g
    unmet = {s: demand[s] - grants[s] for s in order if demand[s] > grants[s]}
    if remaining > 0 and unmet:
        total_unmet = sum(unmet.values())
        spread = 0
        for s in order:
            if s in unmet:
                extra = remaining * unmet[s] // total_unmet
                grants[s] += extra
                spread += extra
        if remaining - spread > 0:
            first_unmet = next(s for s in order if s in unmet)
            grants[first_unmet] += remaining - spread
    return grants


# --- kpm-monitor -----------------------------------------------------------------------


class KpmMonitorXapp(Xapp):
    """Stores KPM records in its SDL namespace (rolling window), publishes
    the `kpm` summary topic, and flushes a CSV to the harness data sink."""

    def __init__(self, descriptor: XappDescriptor):
        super().__init__(descriptor)
        self.window_ms = int(descriptor.params.get("window_ms", 60_000))
        self.kpm_period_ms = int(descriptor.params.get("kpm_period_ms", 100))
        self.flush_period_ms = int(descriptor.params.get("flush_period_ms", 1000))
        self.csv_path = str(descriptor.params.get("csv_path", "") or "")
        self.series: dict[str, list[tuple[int, float]]] = {}
        self.pending_rows: list[str] = []
        self.rows_flushed = 0
        self._next_flush = self.flush_period_ms
        self._csv_started = False

    def on_start(self) -> None:
        for node_id in self.sdk.rnib_nodes():
            self.sdk.subscribe_kpm(node_id, self.kpm_period_ms, KpmActionDefinition(
                NodeKind.DU, Scope.node(), metric_catalog(NodeKind.DU)))

    def on_indication(self, event: IndicationEvent) -> None:
        if event.kpm is None:
            return
        node = event.node_id
        summary: dict[int, dict[str, dict[str, float]]] = {}
        period_ticks = max(self.kpm_period_ms, 1)
        for rec in event.kpm.records:
            cell = rec.scope.cell_id if rec.scope.cell_id is not None else ""
            slc = rec.scope.slice_id if rec.scope.slice_id is not None else ""
            key = f"{node}|{cell}|{slc}|{rec.metric}"
            series = self.series.setdefault(key, [])
            series.append((rec.timestamp_ms, rec.value))
            cutoff = rec.timestamp_ms - self.window_ms
            while series and series[0][0] <= cutoff:
                series.pop(0)
            self.sdk.store_put(key, list(series))
            self.pending_rows.append(
                f"{rec.timestamp_ms},{node},{cell},{slc},{rec.metric},{rec.value:g}")
            if rec.scope.slice_id is not None:
                per_cell = summary.setdefault(rec.scope.cell_id, {})
                per_slice = per_cell.setdefault(rec.scope.slice_id, {})
                per_slice[rec.metric] = rec.value
                if rec.metric == "prb_requested":
                    per_slice["demand_prb"] = -(-int(rec.value) // period_ticks)
        if summary:
            self.sdk.publish(KPM_TOPIC, {
                "node": node, "at_ms": event.kpm.header.collection_start_ms,
                "cells": summary})

    def on_tick(self, now_ms: int) -> None:
        if now_ms < self._next_flush:
            return
        self._next_flush += self.flush_period_ms
        if not self.pending_rows:
            return
        self.rows_flushed += len(self.pending_rows)
        if self.csv_path:
            mode = "a" if self._csv_started else "w"
            with open(self.csv_path, mode, encoding="utf-8") as fh:
                if not self._csv_started:
                    fh.write(KPM_CSV_HEADER + "\n")
                fh.write("\n".join(self.pending_rows) + "\n")
            self._csv_started = True
        self.pending_rows.clear()

    def status(self) -> dict:
        return {"name": self.name, "series": len(self.series),
                "rows_flushed": self.rows_flushed}


# --- slicing-control ----------------------------------------------------------------------


class SlicingXapp(Xapp):
    """Closed-loop RAN slicing: reads per-slice demand, blends the forecast,
    allocates PRBs (trained table or baseline), and pushes quota controls."""

    def __init__(self, descriptor: XappDescriptor):
        super().__init__(descriptor)
        self.kpm_period_ms = int(descriptor.params.get("kpm_period_ms", 100))
        self.objectives = SlicingObjectives()
        self.model: Optional[PolicyModel] = None
        self.model_id: str = ""
        self.observed: dict[int, dict[str, dict[str, float]]] = {}
        self.forecast: dict[str, int] = {}
        self.applied: dict[tuple[int, str], int] = {}
        self.capacity: dict[int, int] = {}
        self.cell_node: dict[int, str] = {}
        self.active_policies: dict[str, dict] = {}
        self.decisions = 0
        self.conflict_skips = 0

    def on_deploy(self, sdk, descriptor) -> None:
        super().on_deploy(sdk, descriptor)
        if descriptor.model_path:
            self.load_model(descriptor.model_path)

    def load_model(self, path: str) -> None:
        self.model = load_policy_model(path)
        self.model_id = self.model.model_id

    def unload_model(self) -> None:
        self.model = None
        self.model_id = ""

    def on_start(self) -> None:
        for node_id in self.sdk.rnib_nodes():
            for cell in self.sdk.rnib_cells(node_id):
                self.capacity[cell.cell_id] = cell.total_prb
                self.cell_node[cell.cell_id] = node_id
            self.sdk.subscribe_kpm(node_id, self.kpm_period_ms, KpmActionDefinition(
                NodeKind.DU, Scope.node(), metric_catalog(NodeKind.DU)))

    def on_indication(self, event: IndicationEvent) -> None:
        if event.kpm is None:
            return
        period_ticks = max(self.kpm_period_ms, 1)
        for rec in event.kpm.records:
            if rec.scope.slice_id is None:
                continue
            per_cell = self.observed.setdefault(rec.scope.cell_id, {})
            per_slice = per_cell.setdefault(rec.scope.slice_id, {})
            per_slice[rec.metric] = rec.value
            if rec.metric == "prb_requested":
                per_slice["demand_prb"] = -(-int(rec.value) // period_ticks)

    def on_topic(self, topic: str, value, epoch: int) -> None:
        if topic == FORECAST_TOPIC:
            slices = value.get("slices", value) if isinstance(value, dict) else {}
            self.forecast = {s: int(v) for s, v in slices.items()}
        elif topic == POLICY_TOPIC:
            self._on_policy(value)

    def _on_policy(self, event: dict) -> None:
        policy = event.get("policy", {})
        policy_id = policy.get("policy_id", "")
        if event.get("op") == "remove":
            if self.active_policies.pop(policy_id, None) is not None:
                self._rebuild_objectives()
                # models are validated against the objectives they were
                # trained for; objective changes drop back to the baseline
                self.unload_model()
            return
        slice_id = policy.get("scope", {}).get("slice")
        try:
            if slice_id is None or slice_id not in SLICE_IDS:
                raise MalformedPolicy(f"slice scope {slice_id!r} unknown")
            trial = self.objectives
            for st in policy.get("statements", []):
                if st.get("kind") != "objective":
                    continue
                trial = trial.with_statement(slice_id, st["name"],
                                             st["comparator"], st["value"])
            trial.check()
        except MalformedPolicy:
            self.sdk.ack_policy(policy_id, enforced=False)
            return
        self.active_policies[policy_id] = policy
        self._rebuild_objectives()
        self.sdk.ack_policy(policy_id, enforced=True)

    def _rebuild_objectives(self) -> None:
        objectives = SlicingObjectives()
        for policy_id in sorted(self.active_policies):
            policy = self.active_policies[policy_id]
            slice_id = policy.get("scope", {}).get("slice")
            for st in policy.get("statements", []):
                if st.get("kind") != "objective":
                    continue
                objectives = objectives.with_statement(
                    slice_id, st["name"], st["comparator"], st["value"])
        self.objectives = objectives

    def demand_vector(self, cell_id: int) -> dict[str, int]:
        per_cell = self.observed.get(cell_id, {})
        demand = {}
        for slice_id in SLICE_IDS:
            if slice_id in per_cell:
                observed = int(per_cell[slice_id].get("demand_prb", 0))
                demand[slice_id] = max(observed, self.forecast.get(slice_id, 0))
        return demand

    def on_tick(self, now_ms: int) -> None:
        for cell_id in sorted(self.observed):
            demand = self.demand_vector(cell_id)
            if not demand:
                continue
            capacity = self.capacity.get(cell_id)
            if capacity is None:
                continue
            alloc = decide_allocation(demand, capacity, self.objectives, self.model)
            self.decisions += 1
            self.sdk.publish(SLICING_TOPIC, {
                "cell": cell_id, "alloc": alloc, "computed_at_ms": now_ms,
                "model_id": self.model_id})
            node_id = self.cell_node[cell_id]
            changes = [(slice_id, prb) for slice_id, prb in alloc.items()
                       if self.applied.get((cell_id, slice_id)) != prb]
            # shrink before grow so intermediate sums stay feasible
            changes.sort(key=lambda c: (c[1] - self.applied.get((cell_id, c[0]), 0), c[0]))
            for slice_id, prb in changes:
                try:
                    result = self.sdk.control(
                        node_id, SlicePrbQuota(cell_id, slice_id, prb))
                except ConflictRejected:
                    self.conflict_skips += 1
                    continue
                if result.status == "acknowledged":
                    self.applied[(cell_id, slice_id)] = prb

    def status(self) -> dict:
        return {"name": self.name, "model_id": self.model_id,
                "decisions": self.decisions,
                "objectives": {
                    "urllc_max_latency_ms": self.objectives.urllc_max_latency_ms,
                    "embb_min_tput_bytes_s": self.objectives.embb_min_tput_bytes_s,
                    "mmtc_min_tx_packets": self.objectives.mmtc_min_tx_packets,
                }}


# --- scheduling-control --------------------------------------------------------------------


HBF_LOAD_FRACTION = 0.8


def decide_policy(forecast: dict[str, int], kpm: dict[str, dict[str, float]],
                  profile: Optional[dict]) -> Optional[dict[str, SliceScheduler]]:
    """Per-slice scheduler choice for one cell: highest-buffer-first when
    the forecast load exceeds 80% of the slice quota, else round-robin.
    Returns None (defer) while the slicing profile is missing."""
    if profile is None:
        return None
    alloc = profile.get("alloc", {})
    out: dict[str, SliceScheduler] = {}
    for slice_id, quota in alloc.items():
        load = forecast.get(slice_id)
        if load is None:
            load = int(kpm.get(slice_id, {}).get("demand_prb", 0))
        if load > HBF_LOAD_FRACTION * quota:
            out[slice_id] = SliceScheduler.HIGHEST_BUFFER_FIRST
        else:
            out[slice_id] = SliceScheduler.ROUND_ROBIN
    return out


class SchedulingXapp(Xapp):
    """Chained consumer: forecast (A), KPM summary (B), slicing profile (C)
    in; scheduling profile (D) out, applied as scheduler policies."""

    def __init__(self, descriptor: XappDescriptor):
        super().__init__(descriptor)
        self.forecast: dict[str, int] = {}
        self.kpm: dict[int, dict[str, dict[str, float]]] = {}
        self.profiles: dict[int, dict] = {}
        self.profile_epochs: dict[int, int] = {}
        self.applied: dict[tuple[int, str], SliceScheduler] = {}
        self.cell_node: dict[int, str] = {}
        self.published = 0
        self.deferred = 0

    def on_start(self) -> None:
        for node_id in self.sdk.rnib_nodes():
            for cell in self.sdk.rnib_cells(node_id):
                self.cell_node[cell.cell_id] = node_id

    def on_topic(self, topic: str, value, epoch: int) -> None:
        if topic == FORECAST_TOPIC:
            slices = value.get("slices", value) if isinstance(value, dict) else {}
            self.forecast = {s: int(v) for s, v in slices.items()}
        elif topic == KPM_TOPIC:
            for cell_id, per_slice in value.get("cells", {}).items():
                self.kpm[int(cell_id)] = per_slice
        elif topic == SLICING_TOPIC:
            cell = value.get("cell")
            self.profiles[cell] = value
            self.profile_epochs[cell] = epoch

    def on_tick(self, now_ms: int) -> None:
        for cell_id in sorted(self.cell_node):
            profile = self.profiles.get(cell_id)
            choice = decide_policy(self.forecast, self.kpm.get(cell_id, {}), profile)
            if choice is None:
                self.deferred += 1
                continue
            self.published += 1
            self.sdk.publish(SCHED_TOPIC, {
                "cell": cell_id,
                "schedulers": {s: sched.name.lower() for s, sched in sorted(choice.items())},
                "from_profile_epoch": self.profile_epochs.get(cell_id, 0),
                "computed_at_ms": now_ms})
            node_id = self.cell_node[cell_id]
            for slice_id in sorted(choice):
                sched = choice[slice_id]
                if self.applied.get((cell_id, slice_id)) == sched:
                    continue
                try:
                    result = self.sdk.control(
                        node_id, SchedulerPolicy(cell_id, slice_id, sched))
                except ConflictRejected:
                    continue
                if result.status == "acknowledged":
                    self.applied[(cell_id, slice_id)] = sched

    def status(self) -> dict:
        return {"name": self.name, "published": self.published,
                "deferred": self.deferred}


BUNDLED_XAPPS = {
    "kpm-monitor": KpmMonitorXapp,
    "slicing-control": SlicingXapp,
    "scheduling-control": SchedulingXapp,
}


def default_descriptor(kind: str, **overrides) -> XappDescriptor:
    """Descriptor presets for the bundled xApps."""
    base = {
        "kpm-monitor": dict(
            name=kind, priority=5, consumed_data=(),
            produced_data=(KPM_TOPIC,), control_capabilities=(),
            loop_period_ms=100),
        "slicing-control": dict(
            name=kind, priority=10,
            consumed_data=(FORECAST_TOPIC, POLICY_TOPIC),
            produced_data=(SLICING_TOPIC,),
            control_capabilities=("RESOURCE_ALLOCATION",),
            loop_period_ms=100),
        "scheduling-control": dict(
            name=kind, priority=8,
            consumed_data=(FORECAST_TOPIC, KPM_TOPIC, SLICING_TOPIC),
            produced_data=(SCHED_TOPIC,),
            control_capabilities=("RESOURCE_ALLOCATION",),
            loop_period_ms=100),
    }[kind]
    base.update(overrides)
    caps = base.pop("control_capabilities", ())
    raw = dict(base)
    raw["control_capabilities"] = list(caps)
    return XappDescriptor.from_dict(raw)
