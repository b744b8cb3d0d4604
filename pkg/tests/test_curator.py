import random

import pytest
from hypothesis import given, settings, strategies as st

from tokenbudget.core import make_ratio_schedule, strip_control_tokens, tokenize
from tokenbudget.curator import (
    RawSample,
    assign_budget,
    augment_prompt,
    balance_mixture,
    curate_record,
    filter_by_length,
    insert_control_tokens,
    length_histogram,
)
from tokenbudget.errors import CurationError, InvalidParameterError


class TestAssignBudget:
    @pytest.mark.parametrize(
        "length,granularity,expected",
        [(123, 50, 150), (100, 50, 100), (1, 50, 50), (10000, 50, 10000), (51, 50, 100)],
    )
    def test_rounds_up_to_granularity(self, length, granularity, expected):
        assert assign_budget(length, granularity) == expected

    def test_rejects_zero(self):
        with pytest.raises(InvalidParameterError):
            assign_budget(0, 50)
        with pytest.raises(InvalidParameterError):
            assign_budget(10, 0)

    @given(length=st.integers(1, 12000), granularity=st.sampled_from([10, 50, 100]))
    def test_slack_invariant(self, length, granularity):
        budget = assign_budget(length, granularity)
        assert budget % granularity == 0
        assert length <= budget
        if length % granularity == 0:
            assert budget == length
        else:
            assert budget - length < granularity


class TestAugmentPrompt:
    def test_literal_concat(self):
        assert augment_prompt("Solve x.", 150) == "Solve x.Please answer within 150 tokens"

    def test_empty_prompt(self):
        assert augment_prompt("", 50) == "Please answer within 50 tokens"

    def test_double_augmentation_rejected(self):
        once = augment_prompt("Solve x.", 150)
        with pytest.raises(CurationError):
            augment_prompt(once, 200)

    def test_zero_budget_rejected(self):
        with pytest.raises(InvalidParameterError):
            augment_prompt("x", 0)


def oracle_insert(answer, schedule):
    """Independent reconstruction: walk timesteps, placing a marker whenever
    the cumulative index matches an eligible entry, else the next answer token."""
    pending = [e for e in schedule.entries if e.position <= len(answer)]
    out = []
    i = 0
    while pending or i < len(answer):
        if pending and pending[0].position == len(out):
            out.append(pending.pop(0).token.surface_form)
        else:
            out.append(answer[i])
            i += 1
    return out


class TestInsertControlTokens:
    def test_positions_are_cumulative(self):
        answer = [f"t{i}" for i in range(350)]
        schedule = make_ratio_schedule(400, 8)  # stride 50, positions 0..350
        result = insert_control_tokens(answer, schedule)
        assert result == oracle_insert(answer, schedule)
        assert len(result) == 350 + 8
        marker_indices = [i for i, tok in enumerate(result) if tok.startswith("<|")]
        assert marker_indices == [0, 50, 100, 150, 200, 250, 300, 350]

    def test_short_answer_gets_origin_marker_only(self):
        answer = [f"t{i}" for i in range(10)]
        schedule = make_ratio_schedule(400, 8)
        result = insert_control_tokens(answer, schedule)
        assert sum(tok.startswith("<|") for tok in result) == 1
        assert result[0].startswith("<|budget:")

    def test_round_trip(self):
        answer = ["alpha", "beta", "gamma", "delta"]
        schedule = make_ratio_schedule(50, 4)
        assert strip_control_tokens(insert_control_tokens(answer, schedule)) == answer

    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(1, 400),
        k=st.integers(1, 16),
        granularity=st.sampled_from([10, 50, 100]),
        origin=st.booleans(),
    )
    def test_round_trip_property(self, n, k, granularity, origin):
        answer = [f"t{i}" for i in range(n)]
        budget = assign_budget(n, granularity)
        if k > budget:
            return
        schedule = make_ratio_schedule(budget, k, origin)
        spliced = insert_control_tokens(answer, schedule)
        assert strip_control_tokens(spliced) == answer
        assert len(spliced) == n + sum(e.position <= n for e in schedule.entries)


class TestCurateRecord:
    def test_end_to_end_record(self):
        sample = RawSample(prompt="Solve x.", answer=" ".join(f"t{i}" for i in range(123)))
        record = curate_record(sample, granularity_t=50, k=8)
        assert record.budget_b == 150
        assert record.augmented_prompt.endswith("Please answer within 150 tokens")
        assert strip_control_tokens(tokenize(record.target)) == tokenize(sample.answer)
        assert record.injected_positions == tuple(
            e.position for e in make_ratio_schedule(150, 8).entries if e.position <= 123
        )

    def test_budget_invariants_randomized(self):
        rng = random.Random(5)
        for _ in range(300):
            n = rng.randint(1, 800)
            t = rng.choice([10, 50, 100])
            sample = RawSample(prompt="p", answer=" ".join(f"t{i}" for i in range(n)))
            record = curate_record(sample, granularity_t=t, k=min(8, assign_budget(n, t)))
            assert record.budget_b % t == 0
            assert record.answer_length <= record.budget_b
            if record.answer_length % t == 0:
                assert record.budget_b == record.answer_length
            else:
                assert record.budget_b - record.answer_length < t

    def test_reserved_marker_rejected(self):
        sample = RawSample(prompt="p", answer="sneaky <|budget:1/8|> text")
        with pytest.raises(CurationError):
            curate_record(sample)
        with pytest.raises(CurationError):
            curate_record(RawSample(prompt="<|elapsed:3|>", answer="fine"))


class TestFilterByLength:
    def test_boundary_inclusive(self):
        long_answer = " ".join(["w"] * 10001)
        edge_answer = " ".join(["w"] * 10000)
        report = filter_by_length(
            [RawSample(prompt="", answer=long_answer), RawSample(prompt="", answer=edge_answer)],
            max_tokens=10000,
        )
        assert report.dropped == 1
        assert len(report.kept) == 1
        assert report.kept[0].token_length == 10000

    def test_empty_input(self):
        report = filter_by_length([], max_tokens=10)
        assert report.kept == [] and report.dropped == 0


def _pool(source, n, words=10):
    return [
        RawSample(prompt=f"{source} q{i}", answer=" ".join(["w"] * words), source=source)
        for i in range(n)
    ]


class TestBalanceMixture:
    def test_caps_honored(self):
        result = balance_mixture(
            _pool("s1k", 20) + _pool("limo", 15), _pool("numina", 30),
            per_source_caps={"s1k": 10, "limo": 15, "numina": 5},
        )
        by_source = {}
        for sample in result.records:
            by_source[sample.source] = by_source.get(sample.source, 0) + 1
        assert by_source == {"s1k": 10, "limo": 15, "numina": 5}

    def test_zero_cap_removes_source(self):
        result = balance_mixture(_pool("a", 5), _pool("b", 5), per_source_caps={"a": 0})
        assert all(s.source != "a" for s in result.records)
        assert sum(s.source == "b" for s in result.records) == 5  # uncapped passes through

    def test_cap_above_pool_takes_all(self):
        result = balance_mixture(_pool("a", 3), [], per_source_caps={"a": 10})
        assert sum(s.source == "a" for s in result.records) == 3
        assert result.shortfalls == {"a": 7}

    def test_deterministic_under_seed(self):
        pools = (_pool("a", 40), _pool("b", 40))
        first = balance_mixture(*pools, per_source_caps={"a": 7, "b": 9}, seed=3)
        second = balance_mixture(*pools, per_source_caps={"a": 7, "b": 9}, seed=3)
        assert [s.prompt for s in first.records] == [s.prompt for s in second.records]

    def test_histogram_buckets(self):
        samples = [
            RawSample(prompt="", answer=" ".join(["w"] * n), source="x")
            for n in (10, 499, 500, 1200)
        ]
        hist = length_histogram(samples, bucket_width=500)
        assert hist == {0: 2, 500: 1, 1000: 1}
