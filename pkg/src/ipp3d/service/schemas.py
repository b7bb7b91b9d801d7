"""Request and response models for the planning service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class FieldGenRequest(BaseModel):
    width: int = 15
    height: int = 15
    seed: int = 0
    resolution: float = 2.5
    gen: dict = Field(default_factory=dict)


class FieldStats(BaseModel):
    occupied_fraction: float
    n_cells: int


class FieldResponse(BaseModel):
    width: int
    height: int
    resolution: float
    values: list[float]
    stats: FieldStats
    text: str


class ObservationModel(BaseModel):
    current_node: int
    remaining_budget: float
    neighbors: list[int]
    affordable: list[bool]
    node_mu: list[float]
    node_std: list[float]
    done: bool


class EpisodeCreateRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    field_seed: int = 0
    noise_seed: int = 0
    snapshot_times: list[float] = Field(default_factory=list)


class EpisodeCreateResponse(BaseModel):
    episode_id: str
    n_nodes: int
    observation: ObservationModel


class StepRequest(BaseModel):
    action: int


class StepResponse(BaseModel):
    observation: ObservationModel
    reward: float
    done: bool
    elapsed_s: float


class PlanRequest(BaseModel):
    planner: Literal["policy", "random", "coverage", "mcts"]
    seed: int = 0
    checkpoint_id: Optional[str] = None


class PlanResponse(BaseModel):
    action: int
    runtime_s: float


class CheckpointUploadRequest(BaseModel):
    data_b64: str


class CheckpointUploadResponse(BaseModel):
    checkpoint_id: str
    n_tensors: int


class EvalRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    checkpoint_id: Optional[str] = None


class MetricRowModel(BaseModel):
    trial: int
    planner: str
    time_s: float
    uncertainty_reduction_pct: float
    rmse_reduction_pct: float
    decision_runtime_s: float


class EvalResponse(BaseModel):
    rows: list[MetricRowModel]
    summary: list[dict]
    metrics_csv: str
    runtimes_csv: str
    summary_csv: str


class TrainRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    total_episodes: int = 200
    seed: int = 0
    randomize_start: bool = True


class TrainJobResponse(BaseModel):
    job_id: str


class TrainStatusResponse(BaseModel):
    job_id: str
    state: Literal["running", "succeeded", "failed"]
    episodes_done: int
    total_episodes: int
    error: Optional[str] = None
    error_kind: Optional[Literal["config", "numerical", "internal"]] = None
    checkpoint_id: Optional[str] = None


class PlotRequest(BaseModel):
    csv_texts: list[str]


class PlotResponse(BaseModel):
    series: dict[str, list[dict]]


class ErrorBody(BaseModel):
    kind: Literal["config", "numerical", "invalid_action", "state", "not_found", "internal"]
    message: str
