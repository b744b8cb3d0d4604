import json

import pytest
from hypothesis import given, settings, strategies as st

from tokenbudget.backends import (
    ContinuationResponse,
    SamplingParams,
    ScriptedBackend,
    StopReason,
)
from tokenbudget.core import ENFORCEMENT_TAG, BudgetSpec, make_ratio_schedule, tokenize
from tokenbudget.errors import BackendError, InvalidParameterError
from tokenbudget.injector import (
    Termination,
    TraceRecord,
    generate_with_budget,
    run_batch,
)


def spec_for(budget, kind="ratio", param=8, window=50, origin=True):
    return BudgetSpec(
        budget_b=budget,
        schedule_kind=kind,
        schedule_param=param,
        include_origin=origin,
        answer_window_w=window,
    )


class TestGenerateWithBudget:
    def test_early_natural_stop(self):
        trace = generate_with_budget(ScriptedBackend(think_tokens=40), "solve", spec_for(800))
        assert trace.termination is Termination.NATURAL_WITHIN_BUDGET
        assert trace.injected_positions == (0,)
        assert trace.think_length == 41  # origin marker + 40 sampled
        assert trace.enforcement_tag is None
        assert trace.think_closed

    def test_never_stopping_backend_is_truncated(self):
        trace = generate_with_budget(
            ScriptedBackend(think_tokens=None, answer_tokens=None), "solve", spec_for(800)
        )
        expected = make_ratio_schedule(800, 8).positions
        assert trace.injected_positions == expected
        assert trace.termination is Termination.ANSWER_WINDOW_EXHAUSTED
        assert trace.think_length == 800

    def test_no_schedule_means_no_injections(self):
        trace = generate_with_budget(
            ScriptedBackend(think_tokens=None), "solve", spec_for(500, kind="none", param=1)
        )
        assert trace.injected_positions == ()
        assert trace.think_length == 500
        assert trace.termination is Termination.TRUNCATED_AT_BUDGET
        assert not any("<|" in t for t in trace.think_tokens)

    def test_stop_at_boundary_beats_injection(self):
        # 99 sampled tokens put the close marker exactly on the second
        # scheduled position; the stop wins and nothing is injected there.
        trace = generate_with_budget(ScriptedBackend(think_tokens=99), "solve", spec_for(800))
        assert trace.termination is Termination.NATURAL_WITHIN_BUDGET
        assert trace.think_length == 100
        assert trace.injected_positions == (0,)

    def test_stop_exactly_at_budget_is_enforced(self):
        spec = spec_for(100, kind="none", param=1)
        trace = generate_with_budget(ScriptedBackend(think_tokens=100), "solve", spec)
        assert trace.think_length == 100
        assert trace.termination is Termination.TRUNCATED_AT_BUDGET

    def test_injected_tokens_sit_at_scheduled_indices(self):
        trace = generate_with_budget(
            ScriptedBackend(think_tokens=None, answer_tokens=None), "solve", spec_for(240, param=4)
        )
        for position in trace.injected_positions:
            assert trace.think_tokens[position].startswith("<|budget:")


class TestEnforcement:
    def test_answer_completes_within_window(self):
        trace = generate_with_budget(
            ScriptedBackend(think_tokens=None, answer_tokens=7), "solve", spec_for(500)
        )
        assert trace.termination is Termination.TRUNCATED_AT_BUDGET
        assert len(trace.answer_tokens) == 7
        assert trace.enforcement_tag == ENFORCEMENT_TAG

    def test_window_exhausted(self):
        trace = generate_with_budget(
            ScriptedBackend(think_tokens=None, answer_tokens=None), "solve", spec_for(500)
        )
        assert trace.termination is Termination.ANSWER_WINDOW_EXHAUSTED
        assert len(trace.answer_tokens) == 50

    def test_zero_window(self):
        trace = generate_with_budget(
            ScriptedBackend(think_tokens=None), "solve", spec_for(500, window=0)
        )
        assert trace.answer_tokens == ()
        assert trace.termination is Termination.ANSWER_WINDOW_EXHAUSTED

    def test_total_token_bound(self):
        spec = spec_for(500)
        trace = generate_with_budget(
            ScriptedBackend(think_tokens=None, answer_tokens=None), "solve", spec
        )
        tag_len = len(tokenize(ENFORCEMENT_TAG))
        assert trace.total_tokens == 500 + tag_len + 50


class _FailingSession:
    def __init__(self, fail_after: int, raise_error: bool) -> None:
        self.calls = 0
        self.fail_after = fail_after
        self.raise_error = raise_error

    def complete(self, request):
        self.calls += 1
        if self.calls > self.fail_after:
            if self.raise_error:
                raise BackendError("socket exploded")
            return ContinuationResponse((), StopReason.ERROR, detail="remote gave up")
        return ContinuationResponse(
            tuple(f"w{i}" for i in range(request.max_tokens)), StopReason.CAP_REACHED
        )


class _FailingBackend:
    def __init__(self, fail_after=1, raise_error=False) -> None:
        self.fail_after = fail_after
        self.raise_error = raise_error

    def new_session(self):
        return _FailingSession(self.fail_after, self.raise_error)


class TestBackendFailures:
    @pytest.mark.parametrize("raise_error", [False, True])
    def test_partial_trace_preserved(self, raise_error):
        trace = generate_with_budget(
            _FailingBackend(fail_after=2, raise_error=raise_error), "solve", spec_for(800)
        )
        assert trace.termination is Termination.BACKEND_ERROR
        assert trace.error
        # two full segments plus the markers at 0, 100, and 200 survived
        assert trace.think_length == 201
        assert trace.injected_positions == (0, 100, 200)
        assert not trace.think_closed

    def test_cap_violation_detected(self):
        class Overeager:
            def new_session(self):
                return self

            def complete(self, request):
                return ContinuationResponse(
                    tuple("x" * (request.max_tokens + 1)), StopReason.CAP_REACHED
                )

        trace = generate_with_budget(Overeager(), "solve", spec_for(100, kind="none", param=1))
        assert trace.termination is Termination.BACKEND_ERROR
        assert "cap" in trace.error


class TestRunBatch:
    def test_cardinality(self):
        traces = run_batch(
            ScriptedBackend(think_tokens=30), ["q0", "q1"], spec_for(400), n_samples=3
        )
        assert len(traces) == 6
        assert [(t.problem_id, t.sample_index) for t in traces] == [
            ("p0", 0), ("p0", 1), ("p0", 2), ("p1", 0), ("p1", 1), ("p1", 2)
        ]

    def test_deterministic_reruns_are_byte_identical(self):
        backend = ScriptedBackend(think_tokens=33)
        params = SamplingParams(temperature=0.0, seed=7)
        first = run_batch(backend, ["a", "b"], spec_for(200), params, n_samples=1)
        second = run_batch(backend, ["a", "b"], spec_for(200), params, n_samples=1)
        dump = lambda ts: [json.dumps(t.to_json_dict(), sort_keys=True) for t in ts]
        assert dump(first) == dump(second)

    def test_derived_seeds_distinct(self):
        traces = run_batch(
            ScriptedBackend(think_tokens=10), ["a", "b"], spec_for(100, param=4), n_samples=3
        )
        seeds = [t.seed for t in traces]
        assert len(set(seeds)) == len(seeds)

    def test_problem_dicts_and_invalid_n(self):
        traces = run_batch(
            ScriptedBackend(think_tokens=5),
            [{"id": "alpha", "prompt": "x"}],
            spec_for(100, param=4),
        )
        assert traces[0].problem_id == "alpha"
        with pytest.raises(InvalidParameterError):
            run_batch(ScriptedBackend(), ["x"], spec_for(100), n_samples=0)


class TestTraceSerialization:
    def test_jsonl_round_trip(self):
        trace = generate_with_budget(ScriptedBackend(think_tokens=25), "solve it", spec_for(400))
        record = trace.to_json_dict()
        assert set(record) >= {
            "prompt", "think_text", "injected_positions", "answer_text",
            "termination", "think_length", "budget",
        }
        restored = TraceRecord.from_json_dict(json.loads(json.dumps(record)))
        assert restored.to_json_dict() == record

    def test_think_length_cannot_exceed_budget(self):
        with pytest.raises(InvalidParameterError):
            TraceRecord(
                prompt="q",
                think_tokens=("a",) * 5,
                injected_positions=(),
                answer_tokens=(),
                termination=Termination.TRUNCATED_AT_BUDGET,
                think_length=5,
                budget_b=4,
            )


@settings(max_examples=60, deadline=None)
@given(
    budget=st.integers(min_value=8, max_value=1200),
    k=st.integers(min_value=1, max_value=8),
    quota=st.one_of(st.none(), st.integers(min_value=0, max_value=1400)),
    window=st.integers(min_value=0, max_value=60),
)
def test_trace_invariants_hold_for_any_script(budget, k, quota, window):
    spec = BudgetSpec(
        budget_b=budget, schedule_kind="ratio", schedule_param=k, answer_window_w=window
    )
    trace = generate_with_budget(ScriptedBackend(think_tokens=quota), "q", spec)
    schedule_positions = make_ratio_schedule(budget, k).positions

    assert trace.think_length <= budget
    assert trace.think_length == len(trace.think_tokens)
    assert len(trace.answer_tokens) <= max(window, 4096)
    assert trace.total_tokens <= budget + trace.tag_token_count + max(window, 4096)
    # injections are exactly the schedule prefix strictly below the final cursor
    assert trace.injected_positions == tuple(
        p for p in schedule_positions if p < trace.think_length
    )
    if trace.termination is Termination.NATURAL_WITHIN_BUDGET:
        assert trace.think_length < budget
    else:
        assert trace.think_length == budget
