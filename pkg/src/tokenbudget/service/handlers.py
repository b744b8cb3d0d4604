"""Service handlers: one pure function per endpoint.

The FastAPI app and the CLI's in-process mode both dispatch through these,
so the wire behavior is identical whether or not a server is running.
"""

from __future__ import annotations

from importlib import metadata

from .. import backends, curator, curriculum, harness, reward
from ..core import BudgetSpec, parse_schedule_arg
from ..errors import InvalidParameterError
from ..injector import TraceRecord, run_batch
from . import schemas


def _package_version() -> str:
    try:
        return metadata.version("tokenbudget")
    except metadata.PackageNotFoundError:  # pragma: no cover - editable quirk
        return "0.0.0"


def health(_: schemas.StrictModel | None = None) -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=_package_version())


def preview_schedule(req: schemas.SchedulePreviewRequest) -> schemas.SchedulePreviewResponse:
    kind, param = parse_schedule_arg(req.schedule)
    spec = BudgetSpec(
        budget_b=req.budget,
        schedule_kind=kind,
        schedule_param=param if kind != "none" else 1,
        include_origin=req.include_origin,
        max_budget_b=req.max_budget,
    )
    schedule = spec.build_schedule()
    if schedule is None:
        return schemas.SchedulePreviewResponse(kind="none", entries=[], vocabulary_size=0)
    return schemas.SchedulePreviewResponse(
        kind=schedule.kind,
        entries=[schemas.ScheduleEntryModel(**entry) for entry in schedule.to_json()],
        vocabulary_size=schedule.vocabulary_size,
    )


def preview_curriculum(req: schemas.CurriculumPreviewRequest) -> schemas.CurriculumPreviewResponse:
    plan = curriculum.CurriculumPlan(
        stages=tuple(req.stages),
        mixed_phase=req.mixed,
        batches_per_stage=req.batches_per_stage,
        seed=req.seed,
    )
    return schemas.CurriculumPreviewResponse(budgets=curriculum.budget_sequence(plan, req.n))


def curate(req: schemas.CurateRequest) -> schemas.CurateResponse:
    samples = [
        curator.RawSample(
            prompt=r.prompt, answer=r.answer, source=r.source, category=r.category
        )
        for r in req.records
    ]
    filtered = curator.filter_by_length(samples, req.max_length)
    long_pool = [s for s in filtered.kept if s.category != "short_cot"]
    short_pool = [s for s in filtered.kept if s.category == "short_cot"]
    mixture = curator.balance_mixture(
        long_pool,
        short_pool,
        per_source_caps=req.caps,
        bucket_width=req.bucket_width,
        seed=req.seed,
    )
    records = []
    for sample in mixture.records:
        sft = curator.curate_record(
            sample,
            granularity_t=req.granularity,
            k=req.k,
            include_origin=req.include_origin,
        )
        records.append(
            schemas.SftRecordModel(
                prompt=sample.prompt,
                answer=sample.answer,
                source=sample.source,
                augmented_prompt=sft.augmented_prompt,
                target=sft.target,
                budget=sft.budget_b,
                injected_positions=list(sft.injected_positions),
                answer_length=sft.answer_length,
            )
        )
    return schemas.CurateResponse(
        records=records,
        dropped=filtered.dropped,
        histogram=mixture.histogram_json(),
        shortfalls=mixture.shortfalls,
    )


def _build_backend(model: schemas.BackendModel):
    if isinstance(model, schemas.ScriptedBackendModel):
        return backends.ScriptedBackend(
            think_tokens=model.think_tokens,
            answer_tokens=model.answer_tokens,
            answer_text=model.answer_text,
        )
    if isinstance(model, schemas.PolicyBackendModel):
        return backends.BudgetSensitiveBackend(
            target_fraction=model.target_fraction, answer_tokens=model.answer_tokens
        )
    if isinstance(model, schemas.HttpBackendModel):
        return backends.HttpStreamBackend(
            backends.EndpointConfig(
                base_url=model.base_url,
                model=model.model,
                auth_env=model.auth_env,
                timeout_s=model.timeout_s,
                max_retries=model.max_retries,
                path=model.path,
            )
        )
    raise InvalidParameterError(f"unknown backend kind {model!r}")


def _trace_to_model(trace: TraceRecord) -> schemas.TraceModel:
    return schemas.TraceModel(**trace.to_json_dict())


def _traces_from_models(models: list[schemas.TraceModel]) -> list[TraceRecord]:
    return [TraceRecord.from_json_dict(m.model_dump()) for m in models]


def generate(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
    kind, param = parse_schedule_arg(req.schedule)
    spec = BudgetSpec(
        budget_b=req.budget,
        schedule_kind=kind,
        schedule_param=param if kind != "none" else 1,
        include_origin=req.include_origin,
        answer_window_w=req.answer_window,
    )
    params = backends.SamplingParams(temperature=req.temperature, top_p=req.top_p, seed=req.seed)
    problems = [
        {"id": p.id if p.id is not None else f"p{i}", "prompt": p.prompt}
        for i, p in enumerate(req.problems)
    ]
    traces = run_batch(_build_backend(req.backend), problems, spec, params, req.n_samples)
    return schemas.GenerateResponse(traces=[_trace_to_model(t) for t in traces])


def score_rewards(req: schemas.RewardScoreRequest) -> schemas.RewardScoreResponse:
    config = reward.RewardConfig(k1=req.k1, k2=req.k2, k3=req.k3, overrun_penalty_r=req.r)
    breakdowns = []
    for item in req.items:
        if item.correct is not None:
            correct = item.correct
        elif item.generated_answer is not None and item.gold is not None:
            correct = reward.answer_correct(item.generated_answer, item.gold)
        else:
            correct = 0
        if item.format_ok is not None:
            format_ok = item.format_ok
        else:
            format_ok = int(bool(item.generated_answer and item.generated_answer.strip()))
        breakdowns.append(
            reward.composite_reward(correct, format_ok, item.think_length, item.budget, config)
        )
    n = len(breakdowns)
    if n:
        summary = schemas.RewardSummaryModel(
            n=n,
            mean_total=sum(b.total for b in breakdowns) / n,
            mean_length_reward=sum(b.length_reward for b in breakdowns) / n,
            correct_rate=sum(b.correct for b in breakdowns) / n,
            format_rate=sum(b.format_ok for b in breakdowns) / n,
        )
    else:
        summary = schemas.RewardSummaryModel(
            n=0, mean_total=0.0, mean_length_reward=0.0, correct_rate=0.0, format_rate=0.0
        )
    return schemas.RewardScoreResponse(
        breakdowns=[schemas.RewardBreakdownModel(**b.to_json_dict()) for b in breakdowns],
        summary=summary,
    )


def _report_rows(report: harness.EvalReport) -> list[schemas.EvalRowModel]:
    return [schemas.EvalRowModel(**row.to_json_dict()) for row in report.rows]


def evaluate(req: schemas.EvalRequest) -> schemas.EvalResponse:
    report = harness.build_report(
        _traces_from_models(req.traces), gold=req.gold, budgets=req.budgets
    )
    return schemas.EvalResponse(schema_version=report.schema_version, rows=_report_rows(report))


def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
    """Sweep the synthetic budget-following policy across budgets."""
    policy = backends.BudgetSensitiveBackend(target_fraction=req.target_fraction)
    problems = [{"id": f"sim{i}", "prompt": f"synthetic problem {i}"} for i in range(req.n_problems)]
    all_traces: list[TraceRecord] = []
    for budget in req.budgets:
        spec = BudgetSpec(
            budget_b=budget,
            schedule_kind="ratio",
            schedule_param=req.k,
            include_origin=req.include_origin,
            answer_window_w=req.answer_window,
        )
        params = backends.SamplingParams(seed=req.seed)
        all_traces.extend(run_batch(policy, problems, spec, params, req.n_samples))
    report = harness.build_report(all_traces, budgets=req.budgets)
    return schemas.SimulateResponse(
        schema_version=report.schema_version,
        rows=_report_rows(report),
        n_traces=len(all_traces),
    )


# Shared route table: path -> (handler, request model or None for GET).
ROUTES = {
    "/v1/health": (health, None),
    "/v1/schedule/preview": (preview_schedule, schemas.SchedulePreviewRequest),
    "/v1/curriculum/preview": (preview_curriculum, schemas.CurriculumPreviewRequest),
    "/v1/curate": (curate, schemas.CurateRequest),
    "/v1/generate": (generate, schemas.GenerateRequest),
    "/v1/reward/score": (score_rewards, schemas.RewardScoreRequest),
    "/v1/eval": (evaluate, schemas.EvalRequest),
    "/v1/simulate": (simulate, schemas.SimulateRequest),
}
