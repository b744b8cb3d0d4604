"""Request/response models for the HTTP service.

Every model forbids unknown keys so malformed configs fail loudly instead of
being silently ignored.
"""

from __future__ import annotations

from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HealthResponse(StrictModel):
    status: str
    version: str


# --- schedule preview ---------------------------------------------------------


class SchedulePreviewRequest(StrictModel):
    budget: int = Field(gt=0)
    schedule: str = "ratio:8"
    include_origin: bool = True
    max_budget: int | None = None


class ScheduleEntryModel(StrictModel):
    position: int
    token: str


class SchedulePreviewResponse(StrictModel):
    kind: str
    entries: list[ScheduleEntryModel]
    vocabulary_size: int


# --- curriculum preview ---------------------------------------------------------


class CurriculumPreviewRequest(StrictModel):
    stages: list[int] = Field(default=[6000, 4000, 3000, 2000])
    mixed: bool = True
    batches_per_stage: int = Field(default=1, ge=1)
    seed: int = 0
    n: int = Field(default=20, ge=0)


class CurriculumPreviewResponse(StrictModel):
    budgets: list[int]


# --- curation -------------------------------------------------------------------


class RawSampleModel(StrictModel):
    prompt: str = ""
    answer: str
    source: str = "unknown"
    category: str | None = None


class SftRecordModel(StrictModel):
    prompt: str
    answer: str
    source: str
    augmented_prompt: str
    target: str
    budget: int
    injected_positions: list[int]
    answer_length: int


class CurateRequest(StrictModel):
    records: list[RawSampleModel]
    granularity: int = Field(default=50, ge=1)
    k: int = Field(default=8, ge=1)
    include_origin: bool = True
    max_length: int = Field(default=10000, ge=1)
    caps: dict[str, int] | None = None
    bucket_width: int = Field(default=500, ge=1)
    seed: int = 0


class CurateResponse(StrictModel):
    records: list[SftRecordModel]
    dropped: int
    histogram: dict[str, int]
    shortfalls: dict[str, int]


# --- generation -------------------------------------------------------------------


class ProblemModel(StrictModel):
    id: str | None = None
    prompt: str


class ScriptedBackendModel(StrictModel):
    kind: Literal["scripted"] = "scripted"
    think_tokens: int | None = None
    answer_tokens: int | None = 5
    answer_text: str | None = None


class PolicyBackendModel(StrictModel):
    kind: Literal["budget_policy"] = "budget_policy"
    target_fraction: float = Field(default=0.9, gt=0)
    answer_tokens: int = Field(default=5, ge=0)


class HttpBackendModel(StrictModel):
    kind: Literal["http"] = "http"
    base_url: str
    model: str = "default"
    auth_env: str = "TOKENBUDGET_API_TOKEN"
    timeout_s: float = 30.0
    max_retries: int = Field(default=2, ge=0)
    path: str = "/v1/stream"


BackendModel = Union[ScriptedBackendModel, PolicyBackendModel, HttpBackendModel]


class TraceModel(StrictModel):
    prompt: str
    think_text: str
    injected_positions: list[int]
    answer_text: str
    termination: str
    think_length: int
    budget: int
    think_closed: bool = True
    enforcement_tag: str | None = None
    problem_id: str = "p0"
    sample_index: int = 0
    seed: int = 0
    error: str | None = None


class GenerateRequest(StrictModel):
    problems: list[ProblemModel]
    budget: int = Field(gt=0)
    schedule: str = "ratio:8"
    include_origin: bool = True
    answer_window: int = Field(default=50, ge=0)
    temperature: float = Field(default=0.0, ge=0)
    top_p: float = Field(default=1.0, gt=0, le=1)
    seed: int = 0
    n_samples: int = Field(default=1, ge=1)
    backend: BackendModel = Field(default_factory=ScriptedBackendModel, discriminator="kind")


class GenerateResponse(StrictModel):
    traces: list[TraceModel]


# --- reward scoring -----------------------------------------------------------------


class RewardItemModel(StrictModel):
    think_length: int = Field(ge=0)
    budget: int = Field(gt=0)
    generated_answer: str | None = None
    gold: str | None = None
    correct: int | None = Field(default=None, ge=0, le=1)
    format_ok: int | None = Field(default=None, ge=0, le=1)


class RewardBreakdownModel(StrictModel):
    correct: int
    format_ok: int
    length_reward: float
    normalized_deviation: float
    gamma: float
    total: float


class RewardSummaryModel(StrictModel):
    n: int
    mean_total: float
    mean_length_reward: float
    correct_rate: float
    format_rate: float


class RewardScoreRequest(StrictModel):
    items: list[RewardItemModel]
    k1: float = Field(default=0.7, ge=0)
    k2: float = Field(default=0.15, ge=0)
    k3: float = Field(default=0.15, ge=0)
    r: float = Field(default=16.0, gt=1)


class RewardScoreResponse(StrictModel):
    breakdowns: list[RewardBreakdownModel]
    summary: RewardSummaryModel


# --- evaluation -----------------------------------------------------------------


class EvalRowModel(StrictModel):
    budget: int
    n_traces: int
    following_ratio: float
    utilization: float | None
    mean_abs_gap: float
    pass_at_1: float | None
    termination_counts: dict[str, int]


class EvalRequest(StrictModel):
    traces: list[TraceModel]
    gold: dict[str, str] | None = None
    budgets: list[int] | None = None


class EvalResponse(StrictModel):
    schema_version: int
    rows: list[EvalRowModel]


class SimulateRequest(StrictModel):
    budgets: list[int]
    target_fraction: float = Field(default=0.9, gt=0)
    k: int = Field(default=8, ge=1)
    include_origin: bool = True
    answer_window: int = Field(default=50, ge=0)
    n_problems: int = Field(default=4, ge=1)
    n_samples: int = Field(default=1, ge=1)
    seed: int = 0


class SimulateResponse(StrictModel):
    schema_version: int
    rows: list[EvalRowModel]
    n_traces: int
