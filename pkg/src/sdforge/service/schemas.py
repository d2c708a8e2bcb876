"""Request and response bodies of the run service."""
from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, StrictInt

from .. import SCHEMA_VERSION

RunKind = Literal["prim", "cart", "adaptive"]
RunStateName = Literal["created", "sampling", "ready", "awaiting_selection", "stepping", "done", "failed"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunParams(_Strict):
    """Run parameters; fields that do not apply to the run kind are ignored."""

    n: int | None = Field(None, ge=2, le=100_000, description="scenario count (default: the experiment's)")
    seed: int | None = Field(None, ge=0, le=2**64 - 1)
    overrides: list[str] = Field(default_factory=list, description="dotted key=value experiment overrides")
    # prim
    patience: float = Field(0.05, gt=0, lt=0.5)
    support_threshold: float = Field(0.05, gt=0, lt=1)
    coverage_floor: float = Field(0.6, ge=0, le=1)
    max_boxes: int = Field(5, ge=1, le=100)
    stop_coverage: float = Field(0.85, gt=0, le=1)
    # cart
    min_split: int = Field(20, ge=2)
    min_leaf: int = Field(10, ge=1)
    max_depth: int = Field(12, ge=1, le=64)
    # adaptive
    n_init: int = Field(100, ge=2)
    pool_size: int = Field(2000, ge=10)
    n_iter: int = Field(50, ge=0, le=10_000)
    batch: int = Field(1, ge=1, le=1000)
    mode: Literal["interior_or_border", "border_only"] = "interior_or_border"
    interior_prob: float = Field(0.5, ge=0, le=1)
    budget: int = Field(200, ge=1)
    starts: int = Field(8, ge=1)
    truth_n: int = Field(0, ge=0, le=100_000, description="truth-set size for per-step diagnostics (0: off)")


class CreateRun(_Strict):
    experiment: str | dict[str, Any] = Field(..., description="bundled experiment name or a full experiment document")
    kind: RunKind
    params: RunParams = Field(default_factory=RunParams)


class SelectBody(_Strict):
    step_index: StrictInt = Field(..., ge=0)


class AdaptiveStepBody(_Strict):
    n: StrictInt = Field(1, ge=1, le=10_000)


class Envelope(BaseModel):
    schema_version: int = SCHEMA_VERSION


class RunCreated(Envelope):
    run_id: str
    kind: RunKind
    state: RunStateName


class RunSummary(Envelope):
    run_id: str
    kind: RunKind
    state: RunStateName
    experiment: dict[str, Any]
    params: dict[str, Any]
    created_at: str
    updated_at: str
    version: int
    counts: dict[str, Any]
    transitions: list[list[str]]
    error: str | None = None


class TrajectoryResponse(Envelope):
    run_id: str
    box_round: int
    n_points: int
    n_vulnerable: int
    selected_index: int | None
    auto_index: int
    steps: list[dict[str, Any]]


class PointsResponse(Envelope):
    run_id: str
    projection: list[str]
    box_round: int | None
    step_index: int | None
    box_source: str
    box: dict[str, list[float]] | list[dict[str, list[float]]] | None
    n_inside: int
    points: dict[str, list[Any]]
    simulated: dict[str, list[Any]] | None = None


class SelectResponse(Envelope):
    run_id: str
    state: RunStateName
    box_round: int
    step_index: int
    box: dict[str, list[float]]
    stats: dict[str, Any]


class CoverResponse(Envelope):
    run_id: str
    state: RunStateName
    committed_box: dict[str, Any]
    next_round: int | None
    residual_points: int
    residual_vulnerable: int


class AdaptiveStepResponse(Envelope):
    run_id: str
    state: RunStateName
    iteration: int
    steps_run: int
    new_points: list[dict[str, Any]]
    diagnostics: dict[str, Any]


class Report(Envelope):
    run_id: str
    kind: RunKind
    state: RunStateName
    summary: dict[str, Any]
    body: dict[str, Any]


class ErrorBody(Envelope):
    detail: Any
