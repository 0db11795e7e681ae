"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ScenarioInfo(BaseModel):
    name: str
    bundled: bool = True


class RunRequest(BaseModel):
    scenario: Optional[str] = Field(
        default=None, description="bundled scenario name or server-local path")
    scenario_yaml: Optional[str] = Field(
        default=None, description="inline scenario document")
    seed: Optional[int] = None
    tcp: bool = False
    capture: bool = False


class RunSummary(BaseModel):
    run_id: str
    scenario: str
    seed: int
    state_hash: str
    violation_rate: float
    mean_cost: float
    consistent: bool


class RunDetail(BaseModel):
    run_id: str
    report: dict[str, Any]


class TrainRequest(BaseModel):
    train: list[str] = Field(description="scenario names, paths, or globs")
    validate_with: list[str] = Field(default_factory=list)
    quant_step: int = 5


class TrainResponse(BaseModel):
    model_id: str
    pass_rate: float
    published: bool
    per_scenario: dict[str, float]


class PolicyRequest(BaseModel):
    op: str = Field(description="create | update | delete | query")
    policy: Optional[dict[str, Any]] = None
    policy_id: Optional[str] = None


class PolicyResponse(BaseModel):
    op: str
    policies: list[dict[str, Any]]


class CatalogEntryInfo(BaseModel):
    model_id: str
    manifest: dict[str, str]


class InspectRequest(BaseModel):
    path: Optional[str] = Field(default=None, description="server-local capture path")
    run_id: Optional[str] = None


class InspectResponse(BaseModel):
    text: str
