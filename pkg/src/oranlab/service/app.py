"""HTTP service wrapping the harness: runs, training, catalog, policies.

The service owns a data directory (runs/, catalog/) and a standing A1
policy set; policies created here are injected at t=0 into every
subsequent run. Runs execute synchronously; this is a desk-scale lab
service, not a job queue.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import OranError, ScenarioInvalid
from ..mlops import Catalog, train_pipeline
from ..nonrt import PolicyStore
from ..runner import inspect_capture, run_scenario
from ..scenario import (
    PolicyOp, Scenario, bundled_scenarios, load_scenario, parse_scenario,
)
from .schemas import (
    CatalogEntryInfo, HealthResponse, InspectRequest, InspectResponse,
    PolicyRequest, PolicyResponse, RunDetail, RunRequest, RunSummary,
    ScenarioInfo, TrainRequest, TrainResponse,
)


def resolve_scenarios(patterns: list[str]) -> list[Scenario]:
    """Expand names, paths, and globs against disk and the bundled set."""
    import fnmatch
    import glob as globmod
    from ..errors import EmptyInput
    out: list[Scenario] = []
    for pattern in patterns:
        hits = sorted(globmod.glob(pattern))
        if hits:
            out.extend(load_scenario(h) for h in hits)
            continue
        bundled = [n for n in bundled_scenarios() if fnmatch.fnmatch(n, pattern)]
        if bundled:
            out.extend(load_scenario(n) for n in bundled)
            continue
        if any(ch in pattern for ch in "*?["):
            raise EmptyInput(f"no scenarios match {pattern!r}")
        out.append(load_scenario(pattern))  # exact name or path; raises if absent
    return out


class ServiceState:
    def __init__(self, data_dir: str):
        self.data_dir = Path(data_dir)
        self.runs_dir = self.data_dir / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.catalog = Catalog(str(self.data_dir / "catalog"))
        self._run_counter = itertools.count(
            len(list(self.runs_dir.iterdir())) + 1)
        self.policy_frames: list[bytes] = []
        self.policy_store = PolicyStore(self.policy_frames.append)

    def next_run_id(self, scenario_name: str) -> str:
        return f"{scenario_name}-{next(self._run_counter):04d}"

    def standing_policy_ops(self) -> tuple[PolicyOp, ...]:
        return tuple(PolicyOp(at_ms=0, op="create", policy=p)
                     for p in self.policy_store.query())


def create_app(data_dir: str = "oranlab-data") -> FastAPI:
    app = FastAPI(title="oranlab", version=__version__)
    state = ServiceState(data_dir)
    app.state.oranlab = state

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(version=__version__)

    @app.get("/scenarios", response_model=list[ScenarioInfo])
    def scenarios() -> list[ScenarioInfo]:
        return [ScenarioInfo(name=n) for n in bundled_scenarios()]

    @app.post("/runs", response_model=RunSummary)
    def start_run(req: RunRequest) -> RunSummary:
        if bool(req.scenario) == bool(req.scenario_yaml):
            raise HTTPException(422, "exactly one of scenario/scenario_yaml required")
        try:
            if req.scenario_yaml:
                scenario = parse_scenario(req.scenario_yaml)
            else:
                scenario = load_scenario(req.scenario)
            if not scenario.catalog_dir and scenario.model_id:
                scenario = Scenario(**{
                    **scenario.__dict__, "catalog_dir": str(state.catalog.root)})
            standing = state.standing_policy_ops()
            if standing:
                scenario = Scenario(**{
                    **scenario.__dict__,
                    "policy_ops": tuple(sorted(
                        standing + scenario.policy_ops, key=lambda p: p.at_ms))})
            run_id = state.next_run_id(scenario.name)
            out_dir = state.runs_dir / run_id
            capture = str(out_dir / "wire.cap") if req.capture else None
            report = run_scenario(scenario, out_dir=str(out_dir), seed=req.seed,
                                  capture_path=capture, tcp=req.tcp)
        except ScenarioInvalid as exc:
            raise HTTPException(422, str(exc)) from exc
        except OranError as exc:
            raise HTTPException(500, str(exc)) from exc
        return RunSummary(
            run_id=run_id, scenario=report.scenario, seed=report.seed,
            state_hash=report.state_hash, violation_rate=report.violation_rate,
            mean_cost=report.mean_cost, consistent=report.consistent)

    @app.get("/runs", response_model=list[str])
    def list_runs() -> list[str]:
        return sorted(p.name for p in state.runs_dir.iterdir() if p.is_dir())

    @app.get("/runs/{run_id}", response_model=RunDetail)
    def run_detail(run_id: str) -> RunDetail:
        path = state.runs_dir / run_id / "report.json"
        if not path.exists():
            raise HTTPException(404, f"no run {run_id!r}")
        return RunDetail(run_id=run_id, report=json.loads(path.read_text()))

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        try:
            trains = resolve_scenarios(req.train)
            vals = resolve_scenarios(req.validate_with) if req.validate_with else []
            workdir = state.data_dir / "train-work"
            model_id, record = train_pipeline(
                trains, vals, catalog_dir=str(state.catalog.root),
                workdir=str(workdir), quant_step=req.quant_step)
        except OranError as exc:
            raise HTTPException(422, str(exc)) from exc
        return TrainResponse(model_id=model_id, pass_rate=record.pass_rate,
                             published=record.passed,
                             per_scenario=record.per_scenario)

    @app.get("/catalog", response_model=list[CatalogEntryInfo])
    def catalog() -> list[CatalogEntryInfo]:
        return [CatalogEntryInfo(model_id=m, manifest=state.catalog.manifest(m))
                for m in state.catalog.entries()]

    @app.get("/catalog/{model_id}", response_model=CatalogEntryInfo)
    def catalog_entry(model_id: str) -> CatalogEntryInfo:
        try:
            return CatalogEntryInfo(model_id=model_id,
                                    manifest=state.catalog.manifest(model_id))
        except OranError as exc:
            raise HTTPException(404, str(exc)) from exc

    @app.post("/policies", response_model=PolicyResponse)
    def policies(req: PolicyRequest) -> PolicyResponse:
        store = state.policy_store
        try:
            if req.op == "create":
                store.create(req.policy or {})
            elif req.op == "update":
                store.update(req.policy or {})
            elif req.op == "delete":
                store.delete(req.policy_id or (req.policy or {}).get("policy_id"))
            elif req.op != "query":
                raise HTTPException(422, f"unknown op {req.op!r}")
        except OranError as exc:
            raise HTTPException(422, str(exc)) from exc
        return PolicyResponse(op=req.op, policies=store.query())

    @app.post("/inspect", response_model=InspectResponse)
    def inspect(req: InspectRequest) -> InspectResponse:
        if bool(req.path) == bool(req.run_id):
            raise HTTPException(422, "exactly one of path/run_id required")
        path = req.path or str(state.runs_dir / req.run_id / "wire.cap")
        if not Path(path).exists():
            raise HTTPException(404, f"no capture at {path}")
        try:
            return InspectResponse(text=inspect_capture(path))
        except OranError as exc:
            raise HTTPException(422, str(exc)) from exc

    return app
