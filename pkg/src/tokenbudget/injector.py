"""The budget-aware generation loop.

Injection works as middleware over any continuation backend: each request is
capped at the distance to the next scheduled marker position, the marker is
appended to the context when that boundary is reached, and the loop resumes.
When the think cursor hits the budget without a natural stop, the close tag
is appended and a bounded answer window is granted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .backends import (
    Backend,
    BackendSession,
    ContinuationRequest,
    ContinuationResponse,
    SamplingParams,
    StopReason,
)
from .core import ENFORCEMENT_TAG, THINK_CLOSE, BudgetSpec, detokenize, tokenize
from .errors import BackendError, InvalidParameterError

# Natural completions carry no budget cap; this bounds the single answer
# request so a misbehaving backend cannot stream forever.
NATURAL_ANSWER_CAP = 4096


class Termination(str, Enum):
    NATURAL_WITHIN_BUDGET = "natural_within_budget"
    TRUNCATED_AT_BUDGET = "truncated_at_budget"
    ANSWER_WINDOW_EXHAUSTED = "answer_window_exhausted"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class TraceRecord:
    """One generation session: everything emitted, injected, and enforced."""

    prompt: str
    think_tokens: tuple[str, ...]
    injected_positions: tuple[int, ...]
    answer_tokens: tuple[str, ...]
    termination: Termination
    think_length: int
    budget_b: int
    think_closed: bool = False
    enforcement_tag: str | None = None
    problem_id: str = "p0"
    sample_index: int = 0
    seed: int = 0
    error: str | None = None

    def __post_init__(self) -> None:
        if self.think_length > self.budget_b:
            raise InvalidParameterError(
                f"think length {self.think_length} exceeds budget {self.budget_b}"
            )

    @property
    def think_text(self) -> str:
        return detokenize(self.think_tokens)

    @property
    def answer_text(self) -> str:
        return detokenize(self.answer_tokens)

    @property
    def tag_token_count(self) -> int:
        return len(tokenize(self.enforcement_tag)) if self.enforcement_tag else 0

    @property
    def total_tokens(self) -> int:
        """Everything the session emitted: think phase, enforcement tag, answer."""
        return self.think_length + self.tag_token_count + len(self.answer_tokens)

    def to_json_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "think_text": self.think_text,
            "injected_positions": list(self.injected_positions),
            "answer_text": self.answer_text,
            "termination": self.termination.value,
            "think_length": self.think_length,
            "budget": self.budget_b,
            "think_closed": self.think_closed,
            "enforcement_tag": self.enforcement_tag,
            "problem_id": self.problem_id,
            "sample_index": self.sample_index,
            "seed": self.seed,
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, record: Mapping) -> "TraceRecord":
        return cls(
            prompt=record.get("prompt", ""),
            think_tokens=tuple(tokenize(record.get("think_text", ""))),
            injected_positions=tuple(record.get("injected_positions", ())),
            answer_tokens=tuple(tokenize(record.get("answer_text", ""))),
            termination=Termination(record["termination"]),
            think_length=int(record["think_length"]),
            budget_b=int(record["budget"]),
            think_closed=bool(record.get("think_closed", record["termination"] != "backend_error")),
            enforcement_tag=record.get("enforcement_tag"),
            problem_id=str(record.get("problem_id", "p0")),
            sample_index=int(record.get("sample_index", 0)),
            seed=int(record.get("seed", 0)),
            error=record.get("error"),
        )


def write_traces_jsonl(traces: Iterable[TraceRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for trace in traces:
            handle.write(json.dumps(trace.to_json_dict(), sort_keys=True) + "\n")


def read_traces_jsonl(path) -> list[TraceRecord]:
    traces = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                traces.append(TraceRecord.from_json_dict(json.loads(line)))
    return traces


def _join_context(*parts: str) -> str:
    return " ".join(p for p in parts if p)


def enforce_budget(
    session: BackendSession,
    context_text: str,
    spec: BudgetSpec,
    params: SamplingParams,
) -> tuple[tuple[str, ...], Termination, str | None]:
    """Cut the think phase at the budget and grant the answer window.

    Appends the close-tag sequence (not counted against the budget), then
    requests at most ``answer_window_w`` tokens. The window filling without
    an end-of-sequence signal means the answer itself was cut short.
    """
    if spec.answer_window_w == 0:
        return (), Termination.ANSWER_WINDOW_EXHAUSTED, None
    request = ContinuationRequest(
        context=_join_context(context_text, ENFORCEMENT_TAG),
        max_tokens=spec.answer_window_w,
        stop_markers=(),
        sampling=params,
    )
    try:
        response = session.complete(request)
    except BackendError as exc:
        return (), Termination.BACKEND_ERROR, str(exc)
    if response.stop_reason is StopReason.ERROR:
        return (), Termination.BACKEND_ERROR, response.detail
    tokens = tuple(response.tokens[: spec.answer_window_w])
    if response.stop_reason is StopReason.CAP_REACHED:
        return tokens, Termination.ANSWER_WINDOW_EXHAUSTED, None
    return tokens, Termination.TRUNCATED_AT_BUDGET, None


def generate_with_budget(
    backend: Backend,
    prompt: str | Sequence[str],
    spec: BudgetSpec,
    params: SamplingParams | None = None,
    *,
    problem_id: str = "p0",
    sample_index: int = 0,
) -> TraceRecord:
    """Run one budgeted generation session and return its full trace."""
    params = params or SamplingParams()
    prompt_tokens = tokenize(prompt) if isinstance(prompt, str) else list(prompt)
    prompt_text = detokenize(prompt_tokens)
    session = backend.new_session()
    try:
        return _run_session(session, prompt_text, spec, params, problem_id, sample_index)
    finally:
        close = getattr(session, "close", None)
        if close is not None:
            close()


def _run_session(
    session: BackendSession,
    prompt_text: str,
    spec: BudgetSpec,
    params: SamplingParams,
    problem_id: str,
    sample_index: int,
) -> TraceRecord:
    schedule = spec.build_schedule()
    entries = schedule.entries if schedule is not None else ()
    budget = spec.budget_b
    think: list[str] = []
    injected: list[int] = []
    sched_i = 0
    natural = False

    def finish(
        termination: Termination,
        answer: tuple[str, ...] = (),
        *,
        closed: bool,
        tag: str | None = None,
        error: str | None = None,
    ) -> TraceRecord:
        return TraceRecord(
            prompt=prompt_text,
            think_tokens=tuple(think),
            injected_positions=tuple(injected),
            answer_tokens=answer,
            termination=termination,
            think_length=len(think),
            budget_b=budget,
            think_closed=closed,
            enforcement_tag=tag,
            problem_id=problem_id,
            sample_index=sample_index,
            seed=params.seed,
            error=error,
        )

    while len(think) < budget:
        cursor = len(think)
        if sched_i < len(entries) and entries[sched_i].position == cursor:
            think.append(entries[sched_i].token.surface_form)
            injected.append(cursor)
            sched_i += 1
            continue
        boundary = entries[sched_i].position if sched_i < len(entries) else budget
        cap = min(boundary, budget) - cursor
        request = ContinuationRequest(
            context=_join_context(prompt_text, detokenize(think)),
            max_tokens=cap,
            stop_markers=(THINK_CLOSE,),
            sampling=params,
        )
        try:
            response = session.complete(request)
        except BackendError as exc:
            return finish(Termination.BACKEND_ERROR, closed=False, error=str(exc))
        if response.stop_reason is StopReason.ERROR:
            return finish(Termination.BACKEND_ERROR, closed=False, error=response.detail)
        if len(response.tokens) > cap:
            return finish(
                Termination.BACKEND_ERROR, closed=False, error="backend exceeded the requested cap"
            )
        think.extend(response.tokens)
        if response.stop_reason is StopReason.CAP_REACHED:
            if not response.tokens:
                return finish(
                    Termination.BACKEND_ERROR, closed=False, error="backend made no progress"
                )
            continue
        # Stop signal: natural only if the close marker lands before the
        # budget boundary; a stop arriving exactly at the boundary is
        # indistinguishable from truncation and is enforced as one.
        if len(think) < budget:
            natural = True
        break

    if natural:
        answer, error = _request_natural_answer(session, prompt_text, think, params)
        if error is not None:
            return finish(Termination.BACKEND_ERROR, answer, closed=True, error=error)
        return finish(Termination.NATURAL_WITHIN_BUDGET, answer, closed=True)

    context_text = _join_context(prompt_text, detokenize(think))
    answer, termination, error = enforce_budget(session, context_text, spec, params)
    if termination is Termination.BACKEND_ERROR:
        return finish(termination, answer, closed=True, tag=ENFORCEMENT_TAG, error=error)
    return finish(termination, answer, closed=True, tag=ENFORCEMENT_TAG)


def _request_natural_answer(
    session: BackendSession,
    prompt_text: str,
    think: list[str],
    params: SamplingParams,
) -> tuple[tuple[str, ...], str | None]:
    # No budget window applies after a natural stop; the cap is a transport
    # safety bound only.
    request = ContinuationRequest(
        context=_join_context(prompt_text, detokenize(think), THINK_CLOSE),
        max_tokens=NATURAL_ANSWER_CAP,
        stop_markers=(),
        sampling=params,
    )
    try:
        response = session.complete(request)
    except BackendError as exc:
        return (), str(exc)
    if response.stop_reason is StopReason.ERROR:
        return (), response.detail or "backend error"
    return tuple(response.tokens), None


def _normalize_problems(problems: Sequence) -> list[tuple[str, str]]:
    normalized: list[tuple[str, str]] = []
    for i, item in enumerate(problems):
        if isinstance(item, str):
            normalized.append((f"p{i}", item))
        elif isinstance(item, Mapping):
            prompt = item.get("prompt")
            if prompt is None:
                raise InvalidParameterError(f"problem {i} has no prompt field")
            normalized.append((str(item.get("id", f"p{i}")), str(prompt)))
        else:
            pid, prompt = item
            normalized.append((str(pid), str(prompt)))
    return normalized


def run_batch(
    backend: Backend,
    problems: Sequence,
    spec: BudgetSpec,
    params: SamplingParams | None = None,
    n_samples: int = 1,
) -> list[TraceRecord]:
    """Generate ``n_samples`` traces per problem under distinct derived seeds.

    Results are ordered by (problem, sample). Backend failures terminate the
    affected trace with a ``backend_error`` record; the batch continues.
    """
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be >= 1")
    params = params or SamplingParams()
    traces: list[TraceRecord] = []
    for i, (problem_id, prompt) in enumerate(_normalize_problems(problems)):
        for j in range(n_samples):
            derived = replace(params, seed=params.seed + i * n_samples + j)
            traces.append(
                generate_with_budget(
                    backend,
                    prompt,
                    spec,
                    derived,
                    problem_id=problem_id,
                    sample_index=j,
                )
            )
    return traces
