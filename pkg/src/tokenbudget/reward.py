"""Composite reward for budget-constrained generation.

Three weighted components: answer correctness, output format, and an
asymmetric length reward that penalizes overruns much harder than
shortfalls. Generated length counts the reasoning phase including injected
markers; the enforcement tag and answer-window tokens stay outside it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import InvalidParameterError
from .injector import TraceRecord

_ANSWER_PHRASE_RE = re.compile(r"answer\s*(?:is|:)\s*([^\n]+)", re.IGNORECASE)
_DIGIT_COMMA_RE = re.compile(r"(?<=\d),(?=\d)")
_INT_RE = re.compile(r"[+-]?\d+")
_FRACTION_RE = re.compile(r"([+-]?\d+)\s*/\s*(\d+)")
_FLOAT_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class RewardConfig:
    k1: float = 0.7
    k2: float = 0.15
    k3: float = 0.15
    overrun_penalty_r: float = 16.0

    def __post_init__(self) -> None:
        if min(self.k1, self.k2, self.k3) < 0:
            raise InvalidParameterError("reward weights must be >= 0")
        if self.overrun_penalty_r <= 1:
            raise InvalidParameterError("overrun penalty must exceed 1")

    @property
    def max_total(self) -> float:
        return self.k1 + self.k2 + self.k3


@dataclass(frozen=True)
class RewardBreakdown:
    correct: int
    format_ok: int
    length_reward: float
    normalized_deviation: float
    gamma: float
    total: float

    def to_json_dict(self) -> dict:
        return {
            "correct": self.correct,
            "format_ok": self.format_ok,
            "length_reward": self.length_reward,
            "normalized_deviation": self.normalized_deviation,
            "gamma": self.gamma,
            "total": self.total,
        }


def length_reward(generated_length: int, budget_b: int, overrun_penalty_r: float = 16.0) -> float:
    """max(1 - gamma * ((B - len) / B)^2, 0) with gamma = 1 under budget, r over."""
    if budget_b <= 0:
        raise InvalidParameterError(f"budget must be positive, got {budget_b}")
    if generated_length < 0:
        raise InvalidParameterError("generated length must be >= 0")
    gamma = 1.0 if generated_length <= budget_b else overrun_penalty_r
    deviation = (budget_b - generated_length) / budget_b
    return max(1.0 - gamma * deviation * deviation, 0.0)


def composite_reward(
    correct: int,
    format_ok: int,
    generated_length: int,
    budget_b: int,
    config: RewardConfig | None = None,
) -> RewardBreakdown:
    config = config or RewardConfig()
    correct = _as_indicator(correct, "correct")
    format_ok = _as_indicator(format_ok, "format_ok")
    reward = length_reward(generated_length, budget_b, config.overrun_penalty_r)
    gamma = 1.0 if generated_length <= budget_b else config.overrun_penalty_r
    return RewardBreakdown(
        correct=correct,
        format_ok=format_ok,
        length_reward=reward,
        normalized_deviation=abs(generated_length - budget_b) / budget_b,
        gamma=gamma,
        total=config.k1 * correct + config.k2 * format_ok + config.k3 * reward,
    )


def _as_indicator(value, name: str) -> int:
    if value in (0, 1, False, True):
        return int(value)
    raise InvalidParameterError(f"{name} must be 0 or 1, got {value!r}")


# --- Answer grading -------------------------------------------------------------


@dataclass(frozen=True)
class GradeResult:
    correct: int
    extracted: str | None
    extraction_failed: bool = False


def _last_boxed(text: str) -> str | None:
    start = text.rfind("\\boxed{")
    if start == -1:
        return None
    depth = 0
    for i in range(start + len("\\boxed"), len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[start + len("\\boxed{") : i]
    return None


def extract_final_answer(text: str) -> str | None:
    """Pull the final answer out of generated text: last boxed expression,
    else the tail of the last "answer is/answer:" phrase."""
    boxed = _last_boxed(text)
    if boxed is not None:
        return boxed
    phrases = _ANSWER_PHRASE_RE.findall(text)
    if phrases:
        return phrases[-1]
    return None


def normalize_answer(value: str) -> str:
    """Minimal canonical form: trim, unwrap $/boxed, canonicalize numerals.

    Deliberately not a symbolic-math comparison; every rule here is auditable.
    """
    out = value.strip()
    while True:
        before = out
        out = out.strip()
        if out.startswith("$") and out.endswith("$") and len(out) > 1:
            out = out[1:-1]
        if out.startswith("\\boxed{") and out.endswith("}"):
            out = out[len("\\boxed{") : -1]
        if out.endswith("."):
            out = out[:-1]
        if out == before:
            break
    out = _DIGIT_COMMA_RE.sub("", out)
    if _INT_RE.fullmatch(out):
        return str(int(out))
    match = _FRACTION_RE.fullmatch(out)
    if match and int(match.group(2)) != 0:
        return str(Fraction(int(match.group(1)), int(match.group(2))))
    if _FLOAT_RE.fullmatch(out):
        return repr(float(out))
    return out


def grade_answer(generated_answer: str, gold: str) -> GradeResult:
    extracted = extract_final_answer(generated_answer)
    if extracted is None:
        # Fall back to grading the whole answer segment; short answers
        # frequently are the bare value.
        candidate = generated_answer.strip()
        if not candidate:
            return GradeResult(correct=0, extracted=None, extraction_failed=True)
        extracted = candidate
    correct = int(normalize_answer(extracted) == normalize_answer(gold))
    return GradeResult(correct=correct, extracted=extracted)


def answer_correct(generated_answer: str, gold: str) -> int:
    return grade_answer(generated_answer, gold).correct


def format_check(trace: TraceRecord) -> int:
    """1 iff the think phase closed (emitted or enforced) and an answer exists."""
    return int(trace.think_closed and len(trace.answer_tokens) > 0)


def score_trace(
    trace: TraceRecord, gold: str | None, config: RewardConfig | None = None
) -> RewardBreakdown:
    """Grade a stored trace end to end; unknown gold scores correctness 0."""
    correct = answer_correct(trace.answer_text, gold) if gold is not None else 0
    return composite_reward(
        correct=correct,
        format_ok=format_check(trace),
        generated_length=trace.think_length,
        budget_b=trace.budget_b,
        config=config,
    )
