"""Factuality, consistency, and prediction-error metrics.

Judge ratings are binarized against thresholds (helpfulness >= 6, rerun
similarity >= 8 by default) and aggregated into:

* factuality: correct rate CR, wrong rate WR, net correct rate NCR = CR - WR;
* consistency: per-instance mean of the binarized rerun similarities, split
  into means over factually-correct and factually-wrong instances, combined
  as NCCR = C_correct * CR - C_wrong * WR;
* prediction errors: the six off-diagonal (gold, predicted) counts per run
  with mean/std across runs, and per-class / overall accuracy.

Everything here is deliberately plain Python arithmetic over small tallies:
sums, counts, and one division at the end, so results are bit-reproducible
and easy to cross-check by brute force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .dataset import LABELS, ClassCounts, InferenceLabel

SOURCE_P1 = "P1"
SOURCE_P3 = "P3"

STD_SAMPLE = "sample"
STD_POPULATION = "population"


class MetricsError(Exception):
    """Raised for empty inputs, inconsistent tallies, or range violations."""


def _check_rating(value: int) -> None:
    if not 1 <= value <= 10:
        raise MetricsError(f"rating must be in 1..10, got {value}")


def _check_threshold(value: int) -> None:
    if not 1 <= value <= 10:
        raise MetricsError(f"threshold must be in 1..10, got {value}")


def binarize_helpfulness(r_h: int, threshold: int = 6) -> int:
    """1 when the helpfulness rating reaches the threshold (default 6)."""
    _check_rating(r_h)
    _check_threshold(threshold)
    return 1 if r_h >= threshold else 0


def binarize_consistency(r_c: int, threshold: int = 8) -> int:
    """1 when the rerun similarity reaches the threshold (default 8)."""
    _check_rating(r_c)
    _check_threshold(threshold)
    return 1 if r_c >= threshold else 0


@dataclass(frozen=True)
class HelpfulnessAnnotation:
    """Judge verdict on one instance's reference axiom."""

    instance_id: str
    source: str  # "P1" or "P3"
    r_h: int
    h: int

    @classmethod
    def from_rating(
        cls, instance_id: str, source: str, r_h: int, threshold: int = 6
    ) -> "HelpfulnessAnnotation":
        return cls(instance_id, source, r_h, binarize_helpfulness(r_h, threshold))


@dataclass(frozen=True)
class ConsistencyAnnotation:
    """Judge similarity of rerun ``j`` to the first generation."""

    instance_id: str
    source: str
    j: int
    r_c: int
    c: int

    def __post_init__(self):
        if self.j < 2:
            raise MetricsError("consistency comparisons start at run 2")

    @classmethod
    def from_rating(
        cls, instance_id: str, source: str, j: int, r_c: int, threshold: int = 8
    ) -> "ConsistencyAnnotation":
        return cls(instance_id, source, j, r_c, binarize_consistency(r_c, threshold))


def consistency_score(annotations: Sequence[ConsistencyAnnotation], runs: int = 5) -> float:
    """Mean of the binary similarity over comparisons j = 2..runs.

    Requires the complete comparison set; a missing or duplicated index is an
    error and the caller drops the instance from consistency aggregates.
    """
    if runs < 2:
        raise MetricsError("consistency needs at least 2 runs")
    expected = set(range(2, runs + 1))
    seen = [a.j for a in annotations]
    if set(seen) != expected or len(seen) != len(expected):
        missing = sorted(expected - set(seen))
        raise MetricsError(f"incomplete comparison set: missing j={missing}, got j={sorted(seen)}")
    ids = {(a.instance_id, a.source) for a in annotations}
    if len(ids) > 1:
        raise MetricsError(f"annotations span multiple instances/sources: {sorted(ids)}")
    return sum(a.c for a in annotations) / (runs - 1)


def net_correct_rate(cr: float, wr: float) -> float:
    return cr - wr


def net_consistently_correct_rate(
    c_correct: float, cr: float, c_wrong: float, wr: float
) -> float:
    return c_correct * cr - c_wrong * wr


@dataclass(frozen=True)
class FactualitySummary:
    cr: float
    wr: float
    ncr: float
    n: int


def factuality_summary(h_values: Iterable[int]) -> FactualitySummary:
    """CR/WR/NCR over the binarized helpfulness labels of annotated instances."""
    values = list(h_values)
    if not values:
        raise MetricsError("cannot summarize an empty annotation set")
    if any(v not in (0, 1) for v in values):
        raise MetricsError("h values must be binary")
    n = len(values)
    cr = sum(1 for v in values if v == 1) / n
    wr = sum(1 for v in values if v == 0) / n
    return FactualitySummary(cr=cr, wr=wr, ncr=net_correct_rate(cr, wr), n=n)


@dataclass(frozen=True)
class ConsistencySummary:
    c_correct: float
    c_wrong: float
    nccr: float
    n: int
    correct_stratum_empty: bool = False
    wrong_stratum_empty: bool = False


def consistency_summary(pairs: Sequence[tuple[int, float]]) -> ConsistencySummary:
    """Combine per-instance (h, Cons) pairs into C_correct, C_wrong, and NCCR.

    An empty stratum contributes a mean of 0 and is flagged, keeping NCCR
    defined; CR/WR inside the formula are computed over these same pairs.
    """
    if not pairs:
        raise MetricsError("cannot summarize an empty (h, Cons) set")
    n = len(pairs)
    correct = [cons for h, cons in pairs if h == 1]
    wrong = [cons for h, cons in pairs if h == 0]
    cr = len(correct) / n
    wr = len(wrong) / n
    c_correct = sum(correct) / len(correct) if correct else 0.0
    c_wrong = sum(wrong) / len(wrong) if wrong else 0.0
    return ConsistencySummary(
        c_correct=c_correct,
        c_wrong=c_wrong,
        nccr=net_consistently_correct_rate(c_correct, cr, c_wrong, wr),
        n=n,
        correct_stratum_empty=not correct,
        wrong_stratum_empty=not wrong,
    )


@dataclass(frozen=True)
class ClassSummary:
    factuality: FactualitySummary | None
    consistency: ConsistencySummary | None


def per_class_breakdown(
    help_annotations: Sequence[HelpfulnessAnnotation],
    cons_scores: Mapping[str, float],
    gold: Mapping[str, InferenceLabel],
) -> dict[InferenceLabel, ClassSummary]:
    """Factuality and consistency summaries within each gold-label stratum.

    ``cons_scores`` maps instance id to its Cons value; instances missing a
    Cons (e.g. judge exclusions) still count toward factuality. Empty strata
    come back as None rather than failing.
    """
    for ann in help_annotations:
        if ann.instance_id not in gold:
            raise MetricsError(f"annotation references unknown instance {ann.instance_id!r}")

    out: dict[InferenceLabel, ClassSummary] = {}
    for label in LABELS:
        anns = [a for a in help_annotations if gold[a.instance_id] == label]
        fact = factuality_summary([a.h for a in anns]) if anns else None
        pairs = [
            (a.h, cons_scores[a.instance_id]) for a in anns if a.instance_id in cons_scores
        ]
        cons = consistency_summary(pairs) if pairs else None
        out[label] = ClassSummary(factuality=fact, consistency=cons)
    return out


# -- prediction error analysis -------------------------------------------


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _std(values: Sequence[float], mode: str = STD_SAMPLE) -> float:
    if mode not in (STD_SAMPLE, STD_POPULATION):
        raise MetricsError(f"unknown std mode {mode!r}")
    n = len(values)
    if n == 1:
        return 0.0
    m = _mean(values)
    ss = sum((v - m) ** 2 for v in values)
    divisor = n - 1 if mode == STD_SAMPLE else n
    return math.sqrt(ss / divisor)


@dataclass(frozen=True)
class RunSeries:
    """A per-run sequence of values with its mean and spread."""

    values: tuple[float, ...]
    mean: float
    std: float

    @classmethod
    def of(cls, values: Sequence[float], std_mode: str = STD_SAMPLE) -> "RunSeries":
        values = tuple(values)
        if not values:
            raise MetricsError("run series cannot be empty")
        return cls(values=values, mean=_mean(values), std=_std(values, std_mode))


ERROR_CELLS: tuple[tuple[InferenceLabel, InferenceLabel], ...] = tuple(
    (g, p) for g in LABELS for p in LABELS if g != p
)


@dataclass(frozen=True)
class ErrorMatrix:
    """Off-diagonal tallies per run, plus per-class correct/excluded counts.

    ``correct`` is None for synthetic matrices built from cell counts alone
    (published means, fixtures); real runs always carry it.
    """

    runs: int
    cells: dict[tuple[InferenceLabel, InferenceLabel], RunSeries]
    excluded: dict[InferenceLabel, RunSeries]
    correct: dict[InferenceLabel, RunSeries] | None
    std_mode: str = STD_SAMPLE

    @classmethod
    def from_cell_counts(
        cls,
        per_run_cells: Mapping[tuple[InferenceLabel, InferenceLabel], Sequence[float]],
        std_mode: str = STD_SAMPLE,
    ) -> "ErrorMatrix":
        """Build a matrix directly from per-run off-diagonal counts (no exclusions)."""
        missing = set(ERROR_CELLS) - set(per_run_cells)
        if missing:
            raise MetricsError(f"missing cells: {sorted((g.value, p.value) for g, p in missing)}")
        lengths = {len(v) for v in per_run_cells.values()}
        if len(lengths) != 1:
            raise MetricsError("all cells must cover the same number of runs")
        runs = lengths.pop()
        zeros = tuple(0.0 for _ in range(runs))
        return cls(
            runs=runs,
            cells={cell: RunSeries.of(per_run_cells[cell], std_mode) for cell in ERROR_CELLS},
            excluded={g: RunSeries.of(zeros, std_mode) for g in LABELS},
            correct=None,
            std_mode=std_mode,
        )


def error_matrix(
    gold: Mapping[str, InferenceLabel],
    predictions: Mapping[str, Sequence[InferenceLabel | None]],
    std_mode: str = STD_SAMPLE,
) -> ErrorMatrix:
    """Tally the six misprediction types per run; None marks an excluded slot."""
    if not predictions:
        raise MetricsError("no predictions to analyze")
    run_counts = {len(v) for v in predictions.values()}
    if len(run_counts) != 1:
        raise MetricsError("instances disagree on the number of runs")
    runs = run_counts.pop()
    if runs < 1:
        raise MetricsError("need at least one run")
    for instance_id in predictions:
        if instance_id not in gold:
            raise MetricsError(f"prediction references unknown instance {instance_id!r}")

    cells = {cell: [0.0] * runs for cell in ERROR_CELLS}
    correct = {g: [0.0] * runs for g in LABELS}
    excluded = {g: [0.0] * runs for g in LABELS}

    for r in range(runs):
        seen = 0
        for instance_id, per_run in predictions.items():
            g = gold[instance_id]
            p = per_run[r]
            if p is None:
                excluded[g][r] += 1
                continue
            seen += 1
            if p == g:
                correct[g][r] += 1
            else:
                cells[(g, p)][r] += 1
        if seen == 0:
            raise MetricsError(f"run {r + 1} has zero usable predictions")

    return ErrorMatrix(
        runs=runs,
        cells={cell: RunSeries.of(v, std_mode) for cell, v in cells.items()},
        excluded={g: RunSeries.of(v, std_mode) for g, v in excluded.items()},
        correct={g: RunSeries.of(v, std_mode) for g, v in correct.items()},
        std_mode=std_mode,
    )


@dataclass(frozen=True)
class ClassAccuracy:
    per_class: dict[InferenceLabel, RunSeries]
    overall: RunSeries


def class_accuracy(matrix: ErrorMatrix, class_counts: ClassCounts) -> ClassAccuracy:
    """Per-class and overall accuracy (percent) per run, with mean/std.

    Excluded slots shrink the denominator instead of counting as wrong. When
    the matrix carries explicit correct counts they are checked against the
    class counts run by run.
    """
    for g in LABELS:
        if class_counts.of(g) == 0:
            raise MetricsError(f"class {g.value!r} has zero instances")

    if matrix.correct is not None:
        for r in range(matrix.runs):
            for g in LABELS:
                errs = sum(matrix.cells[(g, p)].values[r] for p in LABELS if p != g)
                total = matrix.correct[g].values[r] + errs + matrix.excluded[g].values[r]
                if total != class_counts.of(g):
                    raise MetricsError(
                        f"run {r + 1}, class {g.value!r}: tallies sum to {total}, "
                        f"expected {class_counts.of(g)}"
                    )

    per_class: dict[InferenceLabel, list[float]] = {g: [] for g in LABELS}
    overall: list[float] = []
    for r in range(matrix.runs):
        total_count = 0.0
        total_excluded = 0.0
        total_errors = 0.0
        for g in LABELS:
            count = class_counts.of(g)
            excl = matrix.excluded[g].values[r]
            errs = sum(matrix.cells[(g, p)].values[r] for p in LABELS if p != g)
            denom = count - excl
            if denom <= 0:
                raise MetricsError(
                    f"run {r + 1}, class {g.value!r}: no usable instances after exclusions"
                )
            per_class[g].append(100.0 * (count - excl - errs) / denom)
            total_count += count
            total_excluded += excl
            total_errors += errs
        overall.append(
            100.0 * (total_count - total_excluded - total_errors) / (total_count - total_excluded)
        )

    return ClassAccuracy(
        per_class={g: RunSeries.of(v, matrix.std_mode) for g, v in per_class.items()},
        overall=RunSeries.of(overall, matrix.std_mode),
    )
