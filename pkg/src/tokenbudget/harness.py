"""Budget-adherence and accuracy metrics over trace collections.

Metrics exist in two equivalent forms: direct folds over trace lists, and
mergeable per-budget aggregates for parallel or incremental computation.
The merge of two aggregates equals the aggregate of the union.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .injector import Termination, TraceRecord
from .errors import InvalidParameterError, UndefinedMetricError

REPORT_SCHEMA_VERSION = 1


def following_ratio(traces: Sequence[TraceRecord]) -> float:
    """Fraction of sessions that terminated naturally within the budget."""
    if not traces:
        raise UndefinedMetricError("following ratio over an empty trace set")
    natural = sum(t.termination is Termination.NATURAL_WITHIN_BUDGET for t in traces)
    return natural / len(traces)


def utilization(traces: Sequence[TraceRecord]) -> float:
    """Mean think_length / budget over naturally terminating traces only."""
    ratios = [
        t.think_length / t.budget_b
        for t in traces
        if t.termination is Termination.NATURAL_WITHIN_BUDGET
    ]
    if not ratios:
        raise UndefinedMetricError("utilization needs at least one within-budget trace")
    return sum(ratios) / len(ratios)


def mean_abs_gap(traces: Sequence[TraceRecord]) -> float:
    """Mean |think_length - budget| over all traces."""
    if not traces:
        raise UndefinedMetricError("gap over an empty trace set")
    return sum(abs(t.think_length - t.budget_b) for t in traces) / len(traces)


def pass_at_1(grades_by_problem: Mapping[str, Sequence[int]]) -> float:
    """Mean over problems of each problem's mean sample correctness."""
    if not grades_by_problem:
        raise UndefinedMetricError("pass@1 over an empty problem set")
    missing = sorted(pid for pid, grades in grades_by_problem.items() if not grades)
    if missing:
        raise InvalidParameterError(f"problems with no graded samples: {missing}")
    per_problem = [sum(grades) / len(grades) for grades in grades_by_problem.values()]
    return sum(per_problem) / len(per_problem)


@dataclass
class BudgetAggregate:
    """Mergeable sufficient statistics for one budget's metrics."""

    budget: int
    n_traces: int = 0
    n_natural: int = 0
    sum_natural_ratio: float = 0.0
    sum_abs_gap: int = 0
    termination_counts: Counter = field(default_factory=Counter)
    problem_grades: dict[str, list[int]] = field(default_factory=dict)

    @classmethod
    def from_traces(
        cls,
        budget: int,
        traces: Iterable[TraceRecord],
        grades: Mapping[str, Sequence[int]] | None = None,
    ) -> "BudgetAggregate":
        agg = cls(budget=budget)
        for trace in traces:
            if trace.budget_b != budget:
                raise InvalidParameterError(
                    f"trace budget {trace.budget_b} does not match aggregate budget {budget}"
                )
            agg.n_traces += 1
            agg.termination_counts[trace.termination.value] += 1
            agg.sum_abs_gap += abs(trace.think_length - budget)
            if trace.termination is Termination.NATURAL_WITHIN_BUDGET:
                agg.n_natural += 1
                agg.sum_natural_ratio += trace.think_length / budget
        if grades:
            agg.problem_grades = {pid: list(g) for pid, g in grades.items()}
        return agg

    @property
    def following_ratio(self) -> float:
        if self.n_traces == 0:
            raise UndefinedMetricError("empty aggregate")
        return self.n_natural / self.n_traces

    @property
    def utilization(self) -> float | None:
        if self.n_natural == 0:
            return None
        return self.sum_natural_ratio / self.n_natural

    @property
    def mean_abs_gap(self) -> float:
        if self.n_traces == 0:
            raise UndefinedMetricError("empty aggregate")
        return self.sum_abs_gap / self.n_traces

    @property
    def pass_at_1(self) -> float | None:
        if not self.problem_grades:
            return None
        return pass_at_1(self.problem_grades)


def merge_aggregates(a: BudgetAggregate, b: BudgetAggregate) -> BudgetAggregate:
    """Combine aggregates over disjoint trace sets with matching budgets."""
    if a.budget != b.budget:
        raise InvalidParameterError(
            f"cannot merge aggregates for budgets {a.budget} and {b.budget}"
        )
    grades: dict[str, list[int]] = {pid: list(g) for pid, g in a.problem_grades.items()}
    for pid, g in b.problem_grades.items():
        grades.setdefault(pid, []).extend(g)
    return BudgetAggregate(
        budget=a.budget,
        n_traces=a.n_traces + b.n_traces,
        n_natural=a.n_natural + b.n_natural,
        sum_natural_ratio=a.sum_natural_ratio + b.sum_natural_ratio,
        sum_abs_gap=a.sum_abs_gap + b.sum_abs_gap,
        termination_counts=a.termination_counts + b.termination_counts,
        problem_grades=grades,
    )


@dataclass(frozen=True)
class EvalRow:
    budget: int
    n_traces: int
    following_ratio: float
    utilization: float | None
    mean_abs_gap: float
    pass_at_1: float | None
    termination_counts: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "budget": self.budget,
            "n_traces": self.n_traces,
            "following_ratio": self.following_ratio,
            "utilization": self.utilization,
            "mean_abs_gap": self.mean_abs_gap,
            "pass_at_1": self.pass_at_1,
            "termination_counts": dict(sorted(self.termination_counts.items())),
        }


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_json_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "rows": [row.to_json_dict() for row in self.rows],
        }


def row_from_aggregate(agg: BudgetAggregate) -> EvalRow:
    return EvalRow(
        budget=agg.budget,
        n_traces=agg.n_traces,
        following_ratio=agg.following_ratio,
        utilization=agg.utilization,
        mean_abs_gap=agg.mean_abs_gap,
        pass_at_1=agg.pass_at_1,
        termination_counts=dict(agg.termination_counts),
    )


def build_report(
    traces: Sequence[TraceRecord],
    gold: Mapping[str, str] | None = None,
    budgets: Sequence[int] | None = None,
) -> EvalReport:
    """Group traces per budget and compute every metric row.

    With gold answers supplied, each trace's answer is graded and pass@1 is
    reported per budget; problems missing from gold raise.
    """
    from .reward import answer_correct  # local import keeps modules decoupled

    selected = sorted(set(budgets)) if budgets else sorted({t.budget_b for t in traces})
    by_budget: dict[int, list[TraceRecord]] = {b: [] for b in selected}
    for trace in traces:
        if trace.budget_b in by_budget:
            by_budget[trace.budget_b].append(trace)

    rows = []
    for budget in selected:
        group = by_budget[budget]
        if not group:
            raise UndefinedMetricError(f"no traces for requested budget {budget}")
        grades: dict[str, list[int]] | None = None
        if gold is not None:
            missing = sorted({t.problem_id for t in group} - set(gold))
            if missing:
                raise InvalidParameterError(f"gold answers missing for problems: {missing}")
            grades = {}
            for trace in group:
                grades.setdefault(trace.problem_id, []).append(
                    answer_correct(trace.answer_text, gold[trace.problem_id])
                )
        rows.append(row_from_aggregate(BudgetAggregate.from_traces(budget, group, grades)))
    return EvalReport(rows=tuple(rows))


REPORT_FORMATS = ("jsonl", "csv", "plot-data")

_CSV_COLUMNS = (
    "budget",
    "n_traces",
    "following_ratio",
    "utilization",
    "mean_abs_gap",
    "pass_at_1",
)


def emit_report(report: EvalReport, fmt: str, out_dir) -> list[Path]:
    """Write the report in one of the fixed formats; returns written paths.

    ``plot-data`` emits one (x=budget, y=metric) series per metric, ready for
    external plotting. Byte output is deterministic for a fixed report.
    """
    if fmt not in REPORT_FORMATS:
        raise InvalidParameterError(f"format must be one of {REPORT_FORMATS}, got {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        path = out / "report.jsonl"
        with open(path, "w", encoding="utf-8") as handle:
            for row in report.rows:
                handle.write(json.dumps(row.to_json_dict(), sort_keys=True) + "\n")
        return [path]
    if fmt == "csv":
        path = out / "report.csv"
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(_CSV_COLUMNS)
            for row in report.rows:
                record = row.to_json_dict()
                writer.writerow(["" if record[c] is None else record[c] for c in _CSV_COLUMNS])
        return [path]
    path = out / "plot_data.json"
    series = []
    for metric in ("following_ratio", "utilization", "mean_abs_gap", "pass_at_1"):
        points = [
            {"x": row.budget, "y": getattr(row, metric)}
            for row in report.rows
            if getattr(row, metric) is not None
        ]
        series.append({"metric": metric, "points": points})
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"schema_version": report.schema_version, "series": series}, handle, sort_keys=True)
        handle.write("\n")
    return [path]
