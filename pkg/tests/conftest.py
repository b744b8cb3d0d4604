from __future__ import annotations

import pytest

from tokenbudget.injector import Termination, TraceRecord


@pytest.fixture
def make_trace():
    """Factory for metric-level traces where only the accounting matters."""

    def _make(
        budget: int,
        think_length: int,
        termination: Termination = Termination.NATURAL_WITHIN_BUDGET,
        problem_id: str = "p0",
        sample_index: int = 0,
        answer_text: str = "a1",
    ) -> TraceRecord:
        return TraceRecord(
            prompt="q",
            think_tokens=tuple(f"w{i}" for i in range(think_length)),
            injected_positions=(),
            answer_tokens=tuple(answer_text.split()),
            termination=termination,
            think_length=think_length,
            budget_b=budget,
            think_closed=termination is not Termination.BACKEND_ERROR,
            problem_id=problem_id,
            sample_index=sample_index,
        )

    return _make
