"""Decomposer quality, judge reliability and agent performance metrics.

All rates are exact ``Fraction`` values; rendering to two decimals happens
only at the presentation edge.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .judge import TaskJudgement, Verdict


class MetricError(ValueError):
    pass


class AnnotationError(MetricError):
    pass


class MismatchError(MetricError):
    pass


class EmptyGraphError(MetricError):
    pass


class Family(str, Enum):
    DECOMPOSER = "decomposer_quality"
    RELIABILITY = "judge_reliability"
    AGENT = "agent_performance"


@dataclass(frozen=True, slots=True)
class Rate:
    numerator: int
    denominator: int

    @property
    def value(self) -> Fraction | None:
        if self.denominator == 0:
            return None
        return Fraction(self.numerator, self.denominator)

    def render(self, *, percent: bool = False) -> str:
        value = self.value
        if value is None:
            return "undefined"
        if percent:
            return f"{float(value) * 100:.2f}%"
        return f"{float(value):.2f}"


@dataclass(frozen=True)
class MetricReport:
    family: Family
    rates: dict[str, Rate]
    metadata: dict[str, object] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Fraction | None:
        return self.rates[name].value

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "rates": {
                name: {
                    "numerator": rate.numerator,
                    "denominator": rate.denominator,
                    "value": None if rate.value is None else float(rate.value),
                    "display": rate.render(),
                }
                for name, rate in self.rates.items()
            },
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> MetricReport:
        return cls(
            Family(data["family"]),
            {
                name: Rate(entry["numerator"], entry["denominator"])
                for name, entry in data["rates"].items()
            },
            dict(data.get("metadata", {})),
        )

    def to_json(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


# --- decomposer quality -----------------------------------------------------------


class LabelKind(str, Enum):
    COVERING = "covering"
    REDUNDANT = "redundant"
    OPTIONAL = "optional"
    INCORRECT = "incorrect"


@dataclass(frozen=True, slots=True)
class SubstateLabel:
    kind: LabelKind
    ref: int | None = None  # human id for COVERING, duplicate-of auto id for REDUNDANT

    def __post_init__(self) -> None:
        needs_ref = self.kind in (LabelKind.COVERING, LabelKind.REDUNDANT)
        if needs_ref and self.ref is None:
            raise AnnotationError(f"{self.kind.value} label needs a reference id")
        if not needs_ref and self.ref is not None:
            raise AnnotationError(f"{self.kind.value} label takes no reference id")


@dataclass(frozen=True)
class SubstateAnnotation:
    """Human review of one task's generated substates against a human reference list."""

    task_id: str
    labels: Mapping[int, SubstateLabel]
    human_ids: frozenset[int]

    @property
    def covered(self) -> frozenset[int]:
        return frozenset(
            label.ref for label in self.labels.values() if label.kind is LabelKind.COVERING
        )

    def check(self) -> None:
        for auto_id, label in self.labels.items():
            if label.kind is LabelKind.COVERING and label.ref not in self.human_ids:
                raise AnnotationError(
                    f"task {self.task_id}: substate {auto_id} covers unknown human id {label.ref}"
                )
            if label.kind is LabelKind.REDUNDANT and (
                label.ref not in self.labels or label.ref == auto_id
            ):
                raise AnnotationError(
                    f"task {self.task_id}: substate {auto_id} duplicates unknown id {label.ref}"
                )

    @classmethod
    def from_dict(cls, data: Mapping) -> SubstateAnnotation:
        labels = {}
        for key, entry in data["labels"].items():
            labels[int(key)] = SubstateLabel(LabelKind(entry["label"]), entry.get("ref"))
        return cls(data["task_id"], labels, frozenset(data["human_ids"]))

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "human_ids": sorted(self.human_ids),
            "labels": {
                str(i): {"label": label.kind.value, "ref": label.ref}
                for i, label in sorted(self.labels.items())
            },
        }


def decomposer_quality(annotations: Sequence[SubstateAnnotation]) -> MetricReport:
    if not annotations:
        raise AnnotationError("no annotations supplied")
    human_total = covered = auto_total = 0
    counts = {kind: 0 for kind in LabelKind}
    for annotation in annotations:
        annotation.check()
        human_total += len(annotation.human_ids)
        covered += len(annotation.covered)
        auto_total += len(annotation.labels)
        for label in annotation.labels.values():
            counts[label.kind] += 1
    return MetricReport(
        Family.DECOMPOSER,
        {
            "cover_rate": Rate(covered, human_total),
            "redundant_rate": Rate(counts[LabelKind.REDUNDANT], auto_total),
            "optional_rate": Rate(counts[LabelKind.OPTIONAL], auto_total),
            "incorrect_rate": Rate(counts[LabelKind.INCORRECT], auto_total),
        },
        {"averaging": "micro (pooled substates)", "tasks": len(annotations)},
    )


# --- judge reliability --------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruthJudgement:
    task_id: str
    statuses: tuple[Verdict, ...]
    optional: frozenset[int] = frozenset()

    @classmethod
    def from_dict(cls, data: Mapping) -> GroundTruthJudgement:
        return cls(
            data["task_id"],
            tuple(Verdict(v) for v in data["statuses"]),
            frozenset(data.get("optional", ())),
        )

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "statuses": [v.value for v in self.statuses],
            "optional": sorted(self.optional),
        }


def _index_by_task(items: Iterable, what: str) -> dict[str, object]:
    index: dict[str, object] = {}
    for item in items:
        if item.task_id in index:
            raise MismatchError(f"duplicate {what} for task {item.task_id}")
        index[item.task_id] = item
    return index


def judge_reliability(
    judged: Sequence[TaskJudgement], truth: Sequence[GroundTruthJudgement]
) -> MetricReport:
    """Pair-level agreement between judged and human-verified final statuses.

    Substates marked optional in the ground truth are left out of every count.
    """
    judged_by = _index_by_task(judged, "judgement")
    truth_by = _index_by_task(truth, "ground truth")
    if judged_by.keys() != truth_by.keys():
        missing = sorted(judged_by.keys() ^ truth_by.keys())
        raise MismatchError(f"task sets differ: {missing}")
    agree = false_pos = false_neg = excluded = 0
    for task_id in sorted(judged_by):
        j, t = judged_by[task_id], truth_by[task_id]
        if len(j.statuses) != len(t.statuses):
            raise MismatchError(
                f"task {task_id}: {len(j.statuses)} judged substates vs {len(t.statuses)} in truth"
            )
        if any(i < 0 or i >= len(t.statuses) for i in t.optional):
            raise MismatchError(f"task {task_id}: optional ids outside the substate range")
        for i, (mine, real) in enumerate(zip(j.statuses, t.statuses)):
            if i in t.optional:
                excluded += 1
            elif mine is real:
                agree += 1
            elif mine is Verdict.SUCCESS:
                false_pos += 1
            else:
                false_neg += 1
    total = agree + false_pos + false_neg
    return MetricReport(
        Family.RELIABILITY,
        {"sr": Rate(agree, total), "fp": Rate(false_pos, total), "fn": Rate(false_neg, total)},
        {"unit": "(task, substate) pairs", "optional_excluded": excluded, "tasks": len(judged_by)},
    )


# --- agent performance ----------------------------------------------------------------


def agent_performance(judged: Sequence[TaskJudgement]) -> MetricReport:
    """SCR is the per-task completion fraction averaged over tasks; TCR the share of fully complete tasks."""
    if not judged:
        raise MetricError("no judgements supplied")
    scr_sum = Fraction(0)
    complete = 0
    for j in judged:
        if j.total == 0:
            raise EmptyGraphError(f"task {j.task_id} has no substates")
        scr_sum += Fraction(j.completed, j.total)
        complete += j.completed == j.total
    n = len(judged)
    scr = scr_sum / n
    # Rate keeps an integer ratio, so express the mean over a common denominator.
    return MetricReport(
        Family.AGENT,
        {
            "scr": Rate(scr.numerator, scr.denominator),
            "tcr": Rate(complete, n),
        },
        {"averaging": "macro over tasks (SCR)", "tasks": n},
    )
