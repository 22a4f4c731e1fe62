"""Detection quality metrics: counts, F1, global Jaccard, and confusion.

All metrics consume a MatchResult, so they never re-derive the pairing.
Zero denominators resolve to 0.0 by convention throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .dataset_io import ClassSet
from .geometry import area, intersection_area, union_area
from .matching import MatchResult

__all__ = [
    "ScoreReport",
    "ConfusionMatrix",
    "score",
    "score_from_counts",
    "global_jaccard",
    "global_jaccard_sums",
    "confusion",
    "confusion_from_counts",
    "per_class_recall",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Label agreement over matched pairs, column-normalized per true class.

    counts[e][n] is the number of matched pairs whose annotation carries
    class e and whose detection carries class n, indices in ClassSet order.
    percent holds the same cells as percentages of each annotation class's
    matched total, so every nonempty column sums to 100. Classes with no
    matched pairs are listed in empty_columns and their percent column is
    all zeros. Unmatched boxes (false negatives, false positives) are not
    part of the table.
    """

    classes: ClassSet
    counts: tuple[tuple[int, ...], ...]
    percent: tuple[tuple[float, ...], ...]
    empty_columns: tuple[str, ...]


@dataclass(frozen=True)
class ScoreReport:
    """Aggregated evaluation outcome for one detection run."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    j_alpha: tuple[float, float] | None = None  # (alpha, value)
    confusion: ConfusionMatrix | None = None
    config: Mapping[str, float] | None = None


def score_from_counts(tp: int, fp: int, fn: int) -> ScoreReport:
    """Precision, recall and F1 from raw counts; empty denominators give 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError(f"negative counts: tp={tp} fp={fp} fn={fn}")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ScoreReport(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


def score(match: MatchResult) -> ScoreReport:
    """Counts and rates of a match: pairs are TP, the rest FN and FP."""
    return score_from_counts(
        tp=len(match.pairs),
        fp=len(match.unmatched_detections),
        fn=len(match.unmatched_annotations),
    )


def global_jaccard_sums(
    match: MatchResult, annotations, detections, alpha: float
) -> tuple[float, float]:
    """Numerator and denominator of the global Jaccard index.

    The numerator sums intersection areas over matched pairs; the
    denominator sums their union areas plus alpha times the areas of
    unmatched annotations and unmatched detections. alpha=0 measures
    geometric fit of the matched pairs alone; alpha=1 charges every missed
    and spurious box in full.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative: {alpha}")

    def _box(obj):
        return getattr(obj, "box", obj)

    numerator = 0.0
    denominator = 0.0
    for i, j, _ in match.pairs:
        a = _box(annotations[i])
        p = _box(detections[j])
        numerator += intersection_area(a, p)
        denominator += union_area(a, p)
    denominator += alpha * sum(area(_box(annotations[i])) for i in match.unmatched_annotations)
    denominator += alpha * sum(area(_box(detections[j])) for j in match.unmatched_detections)
    return numerator, denominator


def global_jaccard(match: MatchResult, annotations, detections, alpha: float = 0.0) -> float:
    """Image-level fit of matched geometry, optionally penalizing FN/FP."""
    numerator, denominator = global_jaccard_sums(match, annotations, detections, alpha)
    if denominator == 0.0:
        return 0.0
    return numerator / denominator


def confusion_from_counts(
    counts: Sequence[Sequence[int]], classes: ClassSet
) -> ConfusionMatrix:
    """Build a ConfusionMatrix from precomputed per-class pair counts."""
    k = len(classes)
    if len(counts) != k or any(len(col) != k for col in counts):
        raise ValueError(f"counts must be {k}x{k} in class order")
    frozen = tuple(tuple(int(v) for v in col) for col in counts)
    percent = []
    empty = []
    for index, name in enumerate(classes.names):
        total = sum(frozen[index])
        if total == 0:
            empty.append(name)
            percent.append(tuple(0.0 for _ in range(k)))
        else:
            percent.append(tuple(100.0 * v / total for v in frozen[index]))
    return ConfusionMatrix(
        classes=classes,
        counts=frozen,
        percent=tuple(percent),
        empty_columns=tuple(empty),
    )


def confusion(match: MatchResult, annotations, detections, classes: ClassSet) -> ConfusionMatrix:
    """Tabulate annotation label vs detection label over matched pairs."""
    k = len(classes)
    counts = [[0] * k for _ in range(k)]
    for i, j, _ in match.pairs:
        e = classes.index(annotations[i].label)
        n = classes.index(detections[j].label)
        counts[e][n] += 1
    return confusion_from_counts(counts, classes)


def per_class_recall(match: MatchResult, annotations, classes: ClassSet) -> dict[str, float]:
    """Fraction of each annotation class that got matched at all."""
    matched = [0] * len(classes)
    totals = [0] * len(classes)
    matched_ids = {i for i, _, _ in match.pairs}
    for index, annotation in enumerate(annotations):
        e = classes.index(annotation.label)
        totals[e] += 1
        if index in matched_ids:
            matched[e] += 1
    return {
        name: (matched[e] / totals[e] if totals[e] > 0 else 0.0)
        for e, name in enumerate(classes.names)
    }
