"""Curation of raw (prompt, reasoning answer) corpora into budgeted SFT records.

Each record gets a budget rounded up to the granularity, the budget request
appended to its prompt, and control tokens spliced into its target at the
same positions the inference loop would inject them.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .core import (
    ControlSchedule,
    contains_control_marker,
    detokenize,
    make_ratio_schedule,
    tokenize,
)
from .errors import CurationError, InvalidParameterError

logger = logging.getLogger(__name__)

BUDGET_SUFFIX_TEMPLATE = "Please answer within {budget} tokens"
_BUDGET_SUFFIX_RE = re.compile(r"Please answer within \d+ tokens")


@dataclass(frozen=True)
class RawSample:
    """One uncurated corpus sample; ``source`` tags its corpus of origin."""

    prompt: str
    answer: str
    source: str = "unknown"
    category: str | None = None  # complex_reasoning | short_cot

    @property
    def token_length(self) -> int:
        return len(tokenize(self.answer))


@dataclass(frozen=True)
class SftRecord:
    """A curated training pair: budget-augmented prompt, marker-spliced target."""

    augmented_prompt: str
    target: str
    budget_b: int
    injected_positions: tuple[int, ...]
    source: str = "unknown"
    answer_length: int = 0

    def to_json_dict(self, sample: RawSample | None = None) -> dict:
        record = {
            "augmented_prompt": self.augmented_prompt,
            "target": self.target,
            "budget": self.budget_b,
            "injected_positions": list(self.injected_positions),
            "source": self.source,
            "answer_length": self.answer_length,
        }
        if sample is not None:
            record = {"prompt": sample.prompt, "answer": sample.answer, **record}
        return record


def assign_budget(answer_length: int, granularity_t: int) -> int:
    """Round the answer length up to the nearest multiple of the granularity."""
    if answer_length < 1:
        raise InvalidParameterError(f"answer length must be >= 1, got {answer_length}")
    if granularity_t < 1:
        raise InvalidParameterError(f"granularity must be >= 1, got {granularity_t}")
    return granularity_t * -(-answer_length // granularity_t)


def augment_prompt(prompt: str, budget_b: int) -> str:
    """Append the budget request verbatim; refuses to stack a second one."""
    if budget_b < 1:
        raise InvalidParameterError(f"budget must be positive, got {budget_b}")
    if _BUDGET_SUFFIX_RE.search(prompt):
        raise CurationError("prompt already carries a budget request")
    return prompt + BUDGET_SUFFIX_TEMPLATE.format(budget=budget_b)


def insert_control_tokens(answer: Sequence[str], schedule: ControlSchedule) -> list[str]:
    """Splice schedule markers into a token sequence at their cumulative positions.

    A marker at schedule position p ends up with exactly p tokens before it,
    counting markers already inserted, mirroring how injection consumes
    timesteps during inference. Entries beyond the answer length fall in the
    budget's slack region and are unused.
    """
    eligible = [e for e in schedule.entries if e.position <= len(answer)]
    out: list[str] = []
    entry_i = 0
    answer_i = 0
    while entry_i < len(eligible) or answer_i < len(answer):
        if entry_i < len(eligible) and eligible[entry_i].position == len(out):
            out.append(eligible[entry_i].token.surface_form)
            entry_i += 1
        elif answer_i < len(answer):
            out.append(answer[answer_i])
            answer_i += 1
        else:  # pragma: no cover - unreachable: eligible positions <= |answer|
            raise AssertionError("schedule entry position beyond reconstructed sequence")
    return out


def curate_record(
    sample: RawSample,
    granularity_t: int = 50,
    k: int = 8,
    include_origin: bool = True,
) -> SftRecord:
    """Build one SFT record: assign budget, augment prompt, splice markers."""
    if contains_control_marker(sample.answer) or contains_control_marker(sample.prompt):
        raise CurationError(
            f"sample from {sample.source!r} contains a reserved control marker"
        )
    answer_tokens = tokenize(sample.answer)
    budget = assign_budget(len(answer_tokens), granularity_t)
    schedule = make_ratio_schedule(budget, k, include_origin)
    target_tokens = insert_control_tokens(answer_tokens, schedule)
    positions = tuple(e.position for e in schedule.entries if e.position <= len(answer_tokens))
    return SftRecord(
        augmented_prompt=augment_prompt(sample.prompt, budget),
        target=detokenize(target_tokens),
        budget_b=budget,
        injected_positions=positions,
        source=sample.source,
        answer_length=len(answer_tokens),
    )


@dataclass
class FilterReport:
    kept: list[RawSample]
    dropped: int

    @property
    def total(self) -> int:
        return len(self.kept) + self.dropped


def filter_by_length(samples: Iterable[RawSample], max_tokens: int) -> FilterReport:
    """Drop samples whose answers exceed ``max_tokens``; boundary inclusive."""
    if max_tokens < 1:
        raise InvalidParameterError("max_tokens must be positive")
    kept: list[RawSample] = []
    dropped = 0
    for sample in samples:
        if sample.token_length <= max_tokens:
            kept.append(sample)
        else:
            dropped += 1
    if dropped:
        logger.info("length filter dropped %d of %d samples", dropped, dropped + len(kept))
    return FilterReport(kept=kept, dropped=dropped)


@dataclass
class MixtureResult:
    records: list[RawSample]
    histogram: dict[int, int]
    shortfalls: dict[str, int] = field(default_factory=dict)

    def histogram_json(self) -> dict[str, int]:
        return {str(bucket): count for bucket, count in sorted(self.histogram.items())}


def length_histogram(samples: Iterable[RawSample], bucket_width: int = 500) -> dict[int, int]:
    """Bucketed answer-length counts, keyed by bucket start."""
    if bucket_width < 1:
        raise InvalidParameterError("bucket width must be positive")
    counts: Counter[int] = Counter()
    for sample in samples:
        counts[(sample.token_length // bucket_width) * bucket_width] += 1
    return dict(counts)


def balance_mixture(
    long_pool: Sequence[RawSample],
    short_pool: Sequence[RawSample],
    per_source_caps: Mapping[str, int] | None = None,
    bucket_width: int = 500,
    seed: int = 0,
) -> MixtureResult:
    """Blend the two category pools under per-source caps, deterministically.

    Sources with a cap are sampled down to it (all taken, with a warning,
    when the pool is smaller); sources without a cap pass through whole. The
    returned histogram makes the length balance inspectable.
    """
    pools: dict[str, list[RawSample]] = {}
    for sample, category in [(s, "complex_reasoning") for s in long_pool] + [
        (s, "short_cot") for s in short_pool
    ]:
        tagged = sample if sample.category else RawSample(
            prompt=sample.prompt, answer=sample.answer, source=sample.source, category=category
        )
        pools.setdefault(tagged.source, []).append(tagged)

    rng = random.Random(seed)
    caps = dict(per_source_caps or {})
    shortfalls: dict[str, int] = {}
    chosen: list[RawSample] = []
    for source in sorted(pools):
        pool = pools[source]
        cap = caps.get(source)
        if cap is None:
            chosen.extend(pool)
            continue
        if cap > len(pool):
            logger.warning(
                "cap %d for source %r exceeds pool size %d; taking all", cap, source, len(pool)
            )
            shortfalls[source] = cap - len(pool)
            chosen.extend(pool)
        else:
            chosen.extend(rng.sample(pool, cap))
    rng.shuffle(chosen)
    return MixtureResult(
        records=chosen,
        histogram=length_histogram(chosen, bucket_width),
        shortfalls=shortfalls,
    )


def read_samples_jsonl(path) -> list[RawSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            samples.append(
                RawSample(
                    prompt=record.get("prompt", ""),
                    answer=record["answer"],
                    source=record.get("source", "unknown"),
                    category=record.get("category"),
                )
            )
    return samples


def write_records_jsonl(pairs: Iterable[tuple[RawSample, SftRecord]], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sample, record in pairs:
            handle.write(json.dumps(record.to_json_dict(sample), sort_keys=True) + "\n")
