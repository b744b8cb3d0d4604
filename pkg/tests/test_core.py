import pytest
from hypothesis import given, strategies as st

from tokenbudget.core import (
    ENFORCEMENT_TAG,
    BudgetSpec,
    ControlToken,
    make_fixed_schedule,
    make_ratio_schedule,
    parse_schedule_arg,
    strip_control_markers,
    strip_control_tokens,
    tokenize,
)
from tokenbudget.errors import InvalidParameterError


class TestRatioSchedule:
    def test_origin_mode_800_8(self):
        schedule = make_ratio_schedule(800, 8, include_origin=True)
        # oracle: enumerate j * floor(B/K) for j = 0..7
        assert list(schedule.positions) == [j * (800 // 8) for j in range(8)]
        assert [e.token.surface_form for e in schedule.entries] == [
            f"<|budget:{j}/8|>" for j in range(1, 9)
        ]
        assert schedule.vocabulary_size == 8

    def test_no_origin_mode_800_8(self):
        schedule = make_ratio_schedule(800, 8, include_origin=False)
        assert list(schedule.positions) == [j * 100 for j in range(1, 8)]
        assert len(schedule.entries) == 7
        assert schedule.entries[0].token.surface_form == "<|budget:1/8|>"
        assert schedule.vocabulary_size == 8

    def test_budget_equals_k(self):
        schedule = make_ratio_schedule(8, 8)
        assert list(schedule.positions) == [0, 1, 2, 3, 4, 5, 6, 7]

    def test_indivisible_budget_leaves_long_tail(self):
        schedule = make_ratio_schedule(803, 8)
        assert list(schedule.positions) == [j * 100 for j in range(8)]
        # last 103 tokens run uninterrupted
        assert 803 - schedule.positions[-1] == 103

    @pytest.mark.parametrize("k", [0, 801])
    def test_invalid_interval_count(self, k):
        with pytest.raises(InvalidParameterError):
            make_ratio_schedule(800, k)

    @given(
        budget=st.integers(min_value=1, max_value=20000),
        k=st.integers(min_value=1, max_value=64),
        origin=st.booleans(),
    )
    def test_positions_increasing_and_within_budget(self, budget, k, origin):
        if k > budget:
            with pytest.raises(InvalidParameterError):
                make_ratio_schedule(budget, k, origin)
            return
        schedule = make_ratio_schedule(budget, k, origin)
        positions = schedule.positions
        assert len(positions) == (k if origin else k - 1)
        assert all(b > a for a, b in zip(positions, positions[1:]))
        assert all(0 <= p < budget for p in positions)
        assert schedule.vocabulary_size == k


class TestFixedSchedule:
    @pytest.mark.parametrize(
        "budget,interval,expected",
        [(500, 100, 5), (1000, 100, 10), (10000, 50, 200), (10000, 250, 40)],
    )
    def test_entry_counts(self, budget, interval, expected):
        schedule = make_fixed_schedule(budget, interval)
        assert len(schedule.entries) == expected
        assert schedule.vocabulary_size == expected

    def test_positions_and_tokens(self):
        schedule = make_fixed_schedule(500, 100)
        assert list(schedule.positions) == [0, 100, 200, 300, 400]
        assert schedule.entries[-1].token.surface_form == "<|elapsed:5|>"

    def test_vocabulary_follows_max_budget(self):
        schedule = make_fixed_schedule(500, 100, max_budget_b=10000)
        assert len(schedule.entries) == 5
        assert schedule.vocabulary_size == 100

    def test_zero_interval_rejected(self):
        with pytest.raises(InvalidParameterError):
            make_fixed_schedule(500, 0)


class TestTokenizer:
    def test_whitespace_counting(self):
        assert tokenize("a b c") == ["a", "b", "c"]
        assert tokenize("") == []

    def test_marker_atomicity(self):
        assert tokenize("a <|budget:1/8|> b") == ["a", "<|budget:1/8|>", "b"]
        assert tokenize("a<|budget:1/8|>b") == ["a", "<|budget:1/8|>", "b"]
        assert tokenize("<|elapsed:12|>") == ["<|elapsed:12|>"]

    def test_enforcement_tag_tokens(self):
        assert tokenize(ENFORCEMENT_TAG) == ["</think>", "**Final", "Answer**"]

    def test_strip_tokens_roundtrip_identity(self):
        plain = ["alpha", "beta", "gamma"]
        assert strip_control_tokens(plain) == plain
        mixed = ["alpha", "<|budget:1/8|>", "beta", "<|elapsed:3|>"]
        stripped = strip_control_tokens(mixed)
        assert stripped == ["alpha", "beta"]
        assert strip_control_tokens(stripped) == stripped  # idempotent

    def test_strip_markers_in_text(self):
        text = "a <|budget:1/8|> b"
        assert strip_control_markers(text) == "a  b"
        assert len(tokenize(strip_control_markers(text))) == len(tokenize(text)) - 1

    def test_control_token_constructors(self):
        assert ControlToken.ratio(3, 8).surface_form == "<|budget:3/8|>"
        assert ControlToken.elapsed(7).surface_form == "<|elapsed:7|>"
        with pytest.raises(InvalidParameterError):
            ControlToken(index=0, surface_form="<|budget:0/8|>")


class TestBudgetSpec:
    def test_defaults(self):
        spec = BudgetSpec(budget_b=800)
        assert spec.schedule_param == 8
        assert spec.answer_window_w == 50
        assert spec.granularity_t == 50
        assert spec.build_schedule().positions == (0, 100, 200, 300, 400, 500, 600, 700)

    def test_none_schedule(self):
        spec = BudgetSpec(budget_b=500, schedule_kind="none", schedule_param=1)
        assert spec.build_schedule() is None

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"budget_b": 0},
            {"budget_b": 100, "schedule_param": 0},
            {"budget_b": 100, "schedule_param": 101},
            {"budget_b": 100, "schedule_kind": "weird"},
            {"budget_b": 100, "answer_window_w": -1},
            {"budget_b": 100, "granularity_t": 0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            BudgetSpec(**kwargs)

    def test_parse_schedule_arg(self):
        assert parse_schedule_arg("ratio:8") == ("ratio", 8)
        assert parse_schedule_arg("fixed:250") == ("fixed", 250)
        assert parse_schedule_arg("none") == ("none", 0)
        for bad in ("ratio", "ratio:x", "cubic:3"):
            with pytest.raises(InvalidParameterError):
                parse_schedule_arg(bad)

    def test_schedule_json_preview(self):
        preview = make_ratio_schedule(200, 2).to_json()
        assert preview == [
            {"position": 0, "token": "<|budget:1/2|>"},
            {"position": 100, "token": "<|budget:2/2|>"},
        ]
