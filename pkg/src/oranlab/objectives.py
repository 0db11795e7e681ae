"""Slice objectives and the weighted-shortfall cost they induce.

Each slice kind carries one target: a latency ceiling for URLLC, a
throughput floor for eMBB, and a packet floor for mMTC. Objectives are
enforced only under backlog: an idle slice cannot violate a throughput
floor.

The allocation cost used by training, validation, and reporting is the
priority-weighted PRB shortfall: cost = sum_s w_s * max(0, demand_s -
grant_s), with weights decaying by a factor of 10 down the priority order
so one PRB short on a higher-priority slice always outweighs any feasible
reshuffle below it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import MalformedPolicy

SLICE_IDS = ("urllc", "embb", "mmtc")


@dataclass(frozen=True)
class SlicingObjectives:
    urllc_max_latency_ms: float = 5.0
    embb_min_tput_bytes_s: float = 1_000_000.0
    mmtc_min_tx_packets: float = 10.0
    priority: tuple[str, ...] = SLICE_IDS

    def check(self) -> None:
        if min(self.urllc_max_latency_ms, self.embb_min_tput_bytes_s,
               self.mmtc_min_tx_packets) <= 0:
            raise MalformedPolicy("objective thresholds must be positive")
        if sorted(self.priority) != sorted(set(self.priority)):
            raise MalformedPolicy("priority order must not repeat slices")

    def with_statement(self, slice_id: str, name: str, comparator: str,
                       value: float) -> "SlicingObjectives":
        """Apply one objective statement; unknown names raise MalformedPolicy."""
        if slice_id == "urllc" and name == "latency_proxy_ms":
            return replace(self, urllc_max_latency_ms=float(value))
        if slice_id == "embb" and name in ("throughput_bytes_s", "tx_bytes"):
            return replace(self, embb_min_tput_bytes_s=float(value))
        if slice_id == "mmtc" and name == "tx_packets":
            return replace(self, mmtc_min_tx_packets=float(value))
        raise MalformedPolicy(f"no objective {name!r} for slice {slice_id!r}")


def priority_weights(priority: tuple[str, ...]) -> dict[str, float]:
    return {slice_id: 10.0 ** (len(priority) - 1 - rank)
            for rank, slice_id in enumerate(priority)}


def shortfall_cost(demand: dict[str, int], grant: dict[str, int],
                   priority: tuple[str, ...]) -> float:
    weights = priority_weights(priority)
    return sum(weights.get(s, 1.0) * max(0, demand.get(s, 0) - grant.get(s, 0))
               for s in demand)


def slice_violation(kind: str, objectives: SlicingObjectives,
                    metrics: dict[str, float], window_ms: int) -> bool:
    """Objective violation for one slice over one window.

    `metrics` carries tx_bytes, tx_packets, buffer_bytes and
    latency_proxy_ms for the window. A slice only violates while it has
    backlog, so idle slices never violate a floor.
    """
    backlog = metrics.get("buffer_bytes", 0.0) > 0.0
    if kind == "urllc":
        return backlog and \
            metrics.get("latency_proxy_ms", 0.0) > objectives.urllc_max_latency_ms
    if kind == "embb":
        tput = metrics.get("tx_bytes", 0.0) * 1000.0 / max(window_ms, 1)
        return backlog and tput < objectives.embb_min_tput_bytes_s
    if kind == "mmtc":
        return backlog and \
            metrics.get("tx_packets", 0.0) < objectives.mmtc_min_tx_packets
    return False
