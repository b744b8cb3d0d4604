"""Domain types, the tokenizer abstraction, and control-token schedule construction.

Control markers are reserved strings that the tokenizer abstraction counts as
exactly one token each:

    ratio mode:  ``<|budget:k/K|>``  (k-th of K budget fractions)
    fixed mode:  ``<|elapsed:k|>``   (k-th elapsed interval)

The think-close tag ``</think>`` is likewise atomic.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidParameterError

THINK_CLOSE = "</think>"
THINK_OPEN = "<think>"
FINAL_ANSWER_TAG = "**Final Answer**"
# Appended verbatim when the reasoning phase is cut at the budget boundary.
ENFORCEMENT_TAG = THINK_CLOSE + FINAL_ANSWER_TAG

CONTROL_MARKER_RE = re.compile(r"<\|(?:budget:(\d+)/(\d+)|elapsed:(\d+))\|>")
RATIO_MARKER_RE = re.compile(r"<\|budget:(\d+)/(\d+)\|>")

# Atomic units the tokenizer must never split or merge.
_ATOMIC_RE = re.compile(
    r"(<\|(?:budget:\d+/\d+|elapsed:\d+)\|>|</think>|<think>)"
)


@dataclass(frozen=True)
class ControlToken:
    """A reserved budget-progress marker, atomic under the tokenizer."""

    index: int
    surface_form: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise InvalidParameterError(f"control token index must be >= 1, got {self.index}")

    @classmethod
    def ratio(cls, k: int, k_total: int) -> "ControlToken":
        """k-th of ``k_total`` ratio markers."""
        return cls(index=k, surface_form=f"<|budget:{k}/{k_total}|>")

    @classmethod
    def elapsed(cls, k: int) -> "ControlToken":
        """Marker for the k-th elapsed fixed interval."""
        return cls(index=k, surface_form=f"<|elapsed:{k}|>")


@dataclass(frozen=True)
class ScheduleEntry:
    position: int
    token: ControlToken


@dataclass(frozen=True)
class ControlSchedule:
    """Precomputed insertion positions with their control-token identities.

    ``vocabulary_size`` is the number of distinct reserved markers a model
    must know to serve this schedule family: K for ratio schedules
    independent of the budget, ceil(max_budget / interval) for fixed ones.
    """

    entries: tuple[ScheduleEntry, ...]
    vocabulary_size: int
    kind: str = "ratio"

    def __post_init__(self) -> None:
        positions = [e.position for e in self.entries]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise InvalidParameterError("schedule positions must be strictly increasing")

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(e.position for e in self.entries)

    def to_json(self) -> list[dict]:
        return [{"position": e.position, "token": e.token.surface_form} for e in self.entries]


def make_ratio_schedule(budget_b: int, k: int, include_origin: bool = True) -> ControlSchedule:
    """Build the ratio schedule: insertions every floor(B/K) think tokens.

    With ``include_origin`` the j-th marker (1-based) sits at (j-1)*floor(B/K),
    so the first fires before any sampled token. Without it, markers j = 1..K-1
    sit at j*floor(B/K): the first fires after one budget fraction has elapsed.
    """
    if budget_b < 1:
        raise InvalidParameterError(f"budget must be positive, got {budget_b}")
    if k < 1 or k > budget_b:
        raise InvalidParameterError(f"interval count must satisfy 1 <= K <= B, got K={k}, B={budget_b}")
    stride = budget_b // k
    if include_origin:
        entries = tuple(
            ScheduleEntry(position=j * stride, token=ControlToken.ratio(j + 1, k))
            for j in range(k)
        )
    else:
        entries = tuple(
            ScheduleEntry(position=j * stride, token=ControlToken.ratio(j, k))
            for j in range(1, k)
        )
    return ControlSchedule(entries=entries, vocabulary_size=k, kind="ratio")


def make_fixed_schedule(budget_b: int, interval_i: int, max_budget_b: int | None = None) -> ControlSchedule:
    """Build the fixed-interval schedule: a marker every ``interval_i`` tokens.

    ``max_budget_b`` sets the marker vocabulary (ceil(max/I)); it defaults to
    the schedule's own budget.
    """
    if budget_b < 1:
        raise InvalidParameterError(f"budget must be positive, got {budget_b}")
    if interval_i < 1 or interval_i > budget_b:
        raise InvalidParameterError(
            f"interval must satisfy 1 <= I <= B, got I={interval_i}, B={budget_b}"
        )
    max_b = budget_b if max_budget_b is None else max_budget_b
    if max_b < budget_b:
        raise InvalidParameterError("max budget cannot be below the schedule budget")
    n = math.ceil(budget_b / interval_i)
    entries = tuple(
        ScheduleEntry(position=j * interval_i, token=ControlToken.elapsed(j + 1))
        for j in range(n)
    )
    return ControlSchedule(
        entries=entries,
        vocabulary_size=math.ceil(max_b / interval_i),
        kind="fixed",
    )


SCHEDULE_KINDS = ("ratio", "fixed", "none")


@dataclass(frozen=True)
class BudgetSpec:
    """The contract a generation session must honor.

    ``budget_b`` caps the think phase; ``answer_window_w`` is additive
    headroom for the final answer after forced truncation, never subtracted
    from the budget. ``granularity_t`` is the rounding unit used when budgets
    are assigned to training samples.
    """

    budget_b: int
    schedule_kind: str = "ratio"
    schedule_param: int = 8
    include_origin: bool = True
    answer_window_w: int = 50
    granularity_t: int = 50
    max_budget_b: int | None = None

    def __post_init__(self) -> None:
        if self.budget_b < 1:
            raise InvalidParameterError(f"budget must be positive, got {self.budget_b}")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise InvalidParameterError(
                f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.schedule_kind!r}"
            )
        if self.schedule_kind != "none":
            if self.schedule_param < 1 or self.schedule_param > self.budget_b:
                raise InvalidParameterError(
                    f"schedule parameter must satisfy 1 <= p <= B, got "
                    f"p={self.schedule_param}, B={self.budget_b}"
                )
        if self.answer_window_w < 0:
            raise InvalidParameterError("answer window must be >= 0")
        if self.granularity_t < 1:
            raise InvalidParameterError("granularity must be positive")

    def build_schedule(self) -> ControlSchedule | None:
        if self.schedule_kind == "ratio":
            return make_ratio_schedule(self.budget_b, self.schedule_param, self.include_origin)
        if self.schedule_kind == "fixed":
            return make_fixed_schedule(self.budget_b, self.schedule_param, self.max_budget_b)
        return None


def parse_schedule_arg(value: str) -> tuple[str, int]:
    """Parse a ``ratio:K`` / ``fixed:I`` / ``none`` schedule selector."""
    if value == "none":
        return "none", 0
    kind, sep, param = value.partition(":")
    if kind not in ("ratio", "fixed") or not sep:
        raise InvalidParameterError(
            f"schedule must look like ratio:K, fixed:I, or none, got {value!r}"
        )
    try:
        number = int(param)
    except ValueError:
        raise InvalidParameterError(f"schedule parameter must be an integer, got {param!r}") from None
    return kind, number


# --- Tokenizer abstraction ---------------------------------------------------
#
# Tokens are plain strings; a sequence's length in tokens is its list length,
# so concatenation lengths add up by construction. The default realization
# splits on whitespace while keeping every reserved marker atomic.


def tokenize(text: str) -> list[str]:
    """Split text into tokens; reserved markers count as exactly one token."""
    tokens: list[str] = []
    for chunk in _ATOMIC_RE.split(text):
        if not chunk:
            continue
        if _ATOMIC_RE.fullmatch(chunk):
            tokens.append(chunk)
        else:
            tokens.extend(chunk.split())
    return tokens


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def is_control_token(token: str) -> bool:
    return CONTROL_MARKER_RE.fullmatch(token) is not None


def strip_control_tokens(seq: Sequence[str]) -> list[str]:
    """Remove every control-token surface form from a token sequence. Idempotent."""
    return [t for t in seq if not is_control_token(t)]


def strip_control_markers(text: str) -> str:
    """Remove control-marker substrings from raw text, leaving other bytes intact."""
    return CONTROL_MARKER_RE.sub("", text)


def contains_control_marker(text: str) -> bool:
    return CONTROL_MARKER_RE.search(text) is not None
