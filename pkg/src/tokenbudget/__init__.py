"""Budget-aware chain-of-thought decoding middleware and training toolkit."""

from .backends import (
    Backend,
    BackendSession,
    BudgetSensitiveBackend,
    ContinuationRequest,
    ContinuationResponse,
    EndpointConfig,
    HttpStreamBackend,
    SamplingParams,
    ScriptedBackend,
    StopReason,
    count_tokens,
)
from .core import (
    ENFORCEMENT_TAG,
    THINK_CLOSE,
    BudgetSpec,
    ControlSchedule,
    ControlToken,
    detokenize,
    make_fixed_schedule,
    make_ratio_schedule,
    parse_schedule_arg,
    strip_control_markers,
    strip_control_tokens,
    tokenize,
)
from .curator import (
    RawSample,
    SftRecord,
    assign_budget,
    augment_prompt,
    balance_mixture,
    curate_record,
    filter_by_length,
    insert_control_tokens,
)
from .curriculum import CurriculumPlan, CurriculumState, budget_sequence
from .errors import (
    BackendError,
    CurationError,
    CurriculumExhausted,
    InvalidParameterError,
    TokenBudgetError,
    UndefinedMetricError,
)
from .harness import (
    BudgetAggregate,
    EvalReport,
    EvalRow,
    build_report,
    emit_report,
    following_ratio,
    mean_abs_gap,
    merge_aggregates,
    pass_at_1,
    utilization,
)
from .injector import (
    Termination,
    TraceRecord,
    enforce_budget,
    generate_with_budget,
    run_batch,
)
from .reward import (
    RewardBreakdown,
    RewardConfig,
    answer_correct,
    composite_reward,
    format_check,
    grade_answer,
    length_reward,
    score_trace,
)
from .stub_server import StreamingStubServer, StubBehavior

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendError",
    "BackendSession",
    "BudgetAggregate",
    "BudgetSensitiveBackend",
    "BudgetSpec",
    "ContinuationRequest",
    "ContinuationResponse",
    "ControlSchedule",
    "ControlToken",
    "CurationError",
    "CurriculumExhausted",
    "CurriculumPlan",
    "CurriculumState",
    "ENFORCEMENT_TAG",
    "EndpointConfig",
    "EvalReport",
    "EvalRow",
    "HttpStreamBackend",
    "InvalidParameterError",
    "RawSample",
    "RewardBreakdown",
    "RewardConfig",
    "SamplingParams",
    "ScriptedBackend",
    "SftRecord",
    "StopReason",
    "StreamingStubServer",
    "StubBehavior",
    "Termination",
    "THINK_CLOSE",
    "TokenBudgetError",
    "TraceRecord",
    "UndefinedMetricError",
    "answer_correct",
    "assign_budget",
    "augment_prompt",
    "balance_mixture",
    "budget_sequence",
    "build_report",
    "composite_reward",
    "count_tokens",
    "curate_record",
    "detokenize",
    "emit_report",
    "enforce_budget",
    "filter_by_length",
    "following_ratio",
    "format_check",
    "generate_with_budget",
    "grade_answer",
    "insert_control_tokens",
    "length_reward",
    "make_fixed_schedule",
    "make_ratio_schedule",
    "mean_abs_gap",
    "merge_aggregates",
    "parse_schedule_arg",
    "pass_at_1",
    "run_batch",
    "score_trace",
    "strip_control_markers",
    "strip_control_tokens",
    "tokenize",
    "utilization",
]
