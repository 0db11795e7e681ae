"""Scenario files: YAML in, validated run configuration out.

A scenario names the topology (nodes/cells/slices), the UE population and
traffic, the xApps to deploy, A1 policies to inject at given times, the
forecast rApp configuration, and optionally a published policy model to
load into the slicing xApp. Validation failures raise ScenarioInvalid and
name the offending field.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ScenarioInvalid
from .objectives import SlicingObjectives
from .ransim import (
    CellConfig, NodeConfig, SimConfig, SliceConfig, TrafficSpec, UeConfig,
)


@dataclass(frozen=True)
class XappSpec:
    kind: str
    name: str
    overrides: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class PolicyOp:
    at_ms: int
    op: str  # create | update | delete
    policy: dict


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_ms: int
    warmup_ms: int
    sim_config: SimConfig
    xapps: tuple[XappSpec, ...]
    policy_ops: tuple[PolicyOp, ...]
    forecast_enabled: bool
    forecast_window: int
    forecast_horizon_ms: int
    eval_window_ms: int
    objectives: SlicingObjectives
    model_id: Optional[str]
    catalog_dir: Optional[str]

    def with_seed(self, seed: int) -> "Scenario":
        sim = SimConfig(**{**self.sim_config.__dict__, "seed": seed})
        return Scenario(**{**self.__dict__, "seed": seed, "sim_config": sim})


def _need(raw: dict, key: str, where: str):
    if key not in raw:
        raise ScenarioInvalid(f"{where}: missing field {key!r}")
    return raw[key]


def _traffic(raw: dict, where: str) -> TrafficSpec:
    kind = _need(raw, "kind", where)
    known = {"constant", "periodic", "poisson"}
    if kind not in known:
        raise ScenarioInvalid(f"{where}.kind: {kind!r} not one of {sorted(known)}")
    return TrafficSpec(
        kind=kind,
        rate_bytes=int(raw.get("rate_bytes", 0)),
        burst_bytes=int(raw.get("burst_bytes", 0)),
        period_ms=int(raw.get("period_ms", 10)),
        mean_bytes=float(raw.get("mean_bytes", 0.0)),
        packet_bytes=int(raw.get("packet_bytes", 500)),
        start_ms=int(raw.get("start_ms", 0)),
    )


def parse_scenario(text: str, source: str = "<inline>") -> Scenario:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioInvalid(f"{source}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioInvalid(f"{source}: top level must be a mapping")

    name = str(_need(raw, "name", source))
    duration_ms = int(_need(raw, "duration_ms", source))
    warmup_ms = int(raw.get("warmup_ms", 1000))
    if duration_ms <= warmup_ms:
        raise ScenarioInvalid(
            f"duration_ms ({duration_ms}) must exceed warmup_ms ({warmup_ms})")
    seed = int(raw.get("seed", 1))

    nodes = []
    slice_ids_seen: set[str] = set()
    for n_idx, node_raw in enumerate(_need(raw, "nodes", source)):
        where = f"nodes[{n_idx}]"
        cells = []
        for c_idx, cell_raw in enumerate(_need(node_raw, "cells", where)):
            cwhere = f"{where}.cells[{c_idx}]"
            slices = []
            for s_raw in _need(cell_raw, "slices", cwhere):
                kind = str(_need(s_raw, "kind", cwhere + ".slices"))
                if kind not in ("urllc", "embb", "mmtc"):
                    raise ScenarioInvalid(f"{cwhere}: slice kind {kind!r} unknown")
                slices.append(SliceConfig(
                    slice_id=str(s_raw.get("slice_id", kind)),
                    kind=kind,
                    dedicated_prb=int(s_raw.get("dedicated_prb", 0)),
                ))
                slice_ids_seen.add(slices[-1].slice_id)
            total_prb = int(_need(cell_raw, "total_prb", cwhere))
            if sum(s.dedicated_prb for s in slices) > total_prb:
                raise ScenarioInvalid(f"{cwhere}: dedicated PRBs exceed total_prb")
            position = tuple(float(x) for x in cell_raw.get("position", (0.0, 0.0)))
            cells.append(CellConfig(
                cell_id=int(_need(cell_raw, "cell_id", cwhere)),
                global_id=int(_need(cell_raw, "global_id", cwhere)),
                total_prb=total_prb,
                position=position,  # type: ignore[arg-type]
                slices=tuple(slices),
                a3_offset_db=float(cell_raw.get("a3_offset_db", 3.0)),
            ))
        nodes.append(NodeConfig(str(_need(node_raw, "node_id", where)), tuple(cells)))

    cell_ids = {c.cell_id for n in nodes for c in n.cells}
    ues = []
    for u_idx, ue_raw in enumerate(raw.get("ues", ())):
        where = f"ues[{u_idx}]"
        cell = int(_need(ue_raw, "cell", where))
        if cell not in cell_ids:
            raise ScenarioInvalid(f"{where}.cell: no cell {cell} in topology")
        slice_id = str(_need(ue_raw, "slice", where))
        if slice_id not in slice_ids_seen:
            raise ScenarioInvalid(f"{where}.slice: no slice {slice_id!r} in topology")
        path = tuple(
            (float(p[0]), float(p[1]), int(p[2])) for p in ue_raw.get("path", ()))
        ues.append(UeConfig(
            ue_id=int(_need(ue_raw, "ue_id", where)),
            slice_id=slice_id,
            cell_id=cell,
            position=tuple(float(x) for x in ue_raw.get("position", (0.0, 0.0))),  # type: ignore[arg-type]
            traffic=_traffic(_need(ue_raw, "traffic", where), where + ".traffic"),
            path=path,
        ))

    sim_raw = raw.get("sim", {}) or {}
    sim_config = SimConfig(
        nodes=tuple(nodes), ues=tuple(ues), seed=seed,
        tick_ms=int(raw.get("tick_ms", 1)),
        bytes_per_prb=int(raw.get("bytes_per_prb", 1000)),
        heartbeat_period_ms=int(sim_raw.get("heartbeat_period_ms", 1000)),
        pm_interval_ms=int(sim_raw.get("pm_interval_ms", 1000)),
        insert_timeout_executes=bool(sim_raw.get("insert_timeout_executes", True)),
        a3_holdoff_ms=int(sim_raw.get("a3_holdoff_ms", 1000)),
    )

    xapps = []
    for x_idx, x_raw in enumerate(raw.get("xapps", ())):
        where = f"xapps[{x_idx}]"
        kind = str(_need(x_raw, "kind", where))
        overrides = {k: v for k, v in x_raw.items() if k not in ("kind", "name")}
        xapps.append(XappSpec(kind=kind, name=str(x_raw.get("name", kind)),
                              overrides=overrides))

    policy_ops = []
    for p_idx, p_raw in enumerate(raw.get("a1_policies", ())):
        where = f"a1_policies[{p_idx}]"
        op = str(_need(p_raw, "op", where))
        if op not in ("create", "update", "delete"):
            raise ScenarioInvalid(f"{where}.op: {op!r} invalid")
        policy_ops.append(PolicyOp(
            at_ms=int(_need(p_raw, "at_ms", where)),
            op=op,
            policy=p_raw.get("policy") or {"policy_id": p_raw.get("policy_id")},
        ))
    policy_ops.sort(key=lambda p: p.at_ms)

    forecast_raw = raw.get("forecast", {}) or {}
    objectives_raw = raw.get("objectives", {}) or {}
    objectives = SlicingObjectives(
        urllc_max_latency_ms=float(objectives_raw.get("urllc_max_latency_ms", 5.0)),
        embb_min_tput_bytes_s=float(objectives_raw.get("embb_min_tput_bytes_s", 1_000_000.0)),
        mmtc_min_tx_packets=float(objectives_raw.get("mmtc_min_tx_packets", 10.0)),
        priority=tuple(objectives_raw.get("priority", ("urllc", "embb", "mmtc"))),
    )

    return Scenario(
        name=name, seed=seed, duration_ms=duration_ms, warmup_ms=warmup_ms,
        sim_config=sim_config, xapps=tuple(xapps), policy_ops=tuple(policy_ops),
        forecast_enabled=bool(forecast_raw.get("enabled", False)),
        forecast_window=int(forecast_raw.get("window", 5)),
        forecast_horizon_ms=int(forecast_raw.get("horizon_ms", 1000)),
        eval_window_ms=int(raw.get("eval_window_ms", 100)),
        objectives=objectives,
        model_id=raw.get("model_id"),
        catalog_dir=raw.get("catalog_dir"),
    )


def load_scenario(path: str) -> Scenario:
    p = Path(path)
    if not p.exists():
        bundled = bundled_scenario_path(path)
        if bundled is not None:
            p = bundled
        else:
            raise ScenarioInvalid(f"scenario file {path!r} not found")
    return parse_scenario(p.read_text(encoding="utf-8"), source=str(p))


def bundled_scenario_path(name: str) -> Optional[Path]:
    """Resolve a bundled scenario by bare name (e.g. 'slicing-baseline')."""
    base = importlib.resources.files("oranlab") / "scenarios"
    candidate = base / (name if name.endswith(".yaml") else f"{name}.yaml")
    try:
        if candidate.is_file():
            return Path(str(candidate))
    except (OSError, TypeError):
        return None
    return None


def bundled_scenarios() -> list[str]:
    base = importlib.resources.files("oranlab") / "scenarios"
    out = []
    for entry in base.iterdir():
        if entry.name.endswith(".yaml"):
            out.append(entry.name[:-5])
    return sorted(out)
