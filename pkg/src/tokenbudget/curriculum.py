"""Staged budget schedule: strictly decreasing budgets, then mixed sampling.

One budget is drawn per training batch. The staged portion walks the plan in
order; the mixed phase draws uniformly from the full stage set so earlier
budgets stay in distribution.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .errors import CurriculumExhausted, InvalidParameterError

DEFAULT_STAGES = (6000, 4000, 3000, 2000)


@dataclass(frozen=True)
class CurriculumPlan:
    stages: tuple[int, ...] = DEFAULT_STAGES
    mixed_phase: bool = True
    batches_per_stage: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.stages:
            raise InvalidParameterError("plan needs at least one stage")
        if any(b < 1 for b in self.stages):
            raise InvalidParameterError("stage budgets must be positive")
        if any(later >= earlier for earlier, later in zip(self.stages, self.stages[1:])):
            raise InvalidParameterError("stage budgets must strictly decrease")
        if self.batches_per_stage < 1:
            raise InvalidParameterError("batches per stage must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "stages": list(self.stages),
            "mixed": self.mixed_phase,
            "batches_per_stage": self.batches_per_stage,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "CurriculumPlan":
        return cls(
            stages=tuple(record.get("stages", DEFAULT_STAGES)),
            mixed_phase=bool(record.get("mixed", True)),
            batches_per_stage=int(record.get("batches_per_stage", 1)),
            seed=int(record.get("seed", 0)),
        )

    @classmethod
    def from_file(cls, path) -> "CurriculumPlan":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json_dict(json.load(handle))


class CurriculumState:
    """Walks a plan batch by batch; a single owner advances it."""

    def __init__(self, plan: CurriculumPlan) -> None:
        self.plan = plan
        self._batch = 0
        self._rng = random.Random(plan.seed)

    @property
    def in_mixed_phase(self) -> bool:
        return self._batch >= len(self.plan.stages) * self.plan.batches_per_stage

    @property
    def stage_index(self) -> int:
        if self.in_mixed_phase:
            raise CurriculumExhausted("staged portion complete")
        return self._batch // self.plan.batches_per_stage

    def stage_budget(self) -> int:
        """Budget of the current stage; raises once stages are exhausted."""
        return self.plan.stages[self.stage_index]

    def sample_mixed_budget(self) -> int:
        """Uniform draw over all stage budgets; only valid in the mixed phase."""
        if not self.in_mixed_phase:
            raise InvalidParameterError("mixed phase has not started")
        return self._rng.choice(self.plan.stages)

    def next_budget(self) -> int:
        """Budget for the next training batch, advancing the state."""
        if not self.in_mixed_phase:
            budget = self.stage_budget()
        elif self.plan.mixed_phase:
            budget = self.sample_mixed_budget()
        else:
            raise CurriculumExhausted("plan exhausted and mixed phase disabled")
        self._batch += 1
        return budget


def budget_sequence(plan: CurriculumPlan, n: int) -> list[int]:
    """First ``n`` budget draws of the plan; deterministic in (plan, seed)."""
    if n < 0:
        raise InvalidParameterError("n must be >= 0")
    state = CurriculumState(plan)
    return [state.next_budget() for _ in range(n)]
