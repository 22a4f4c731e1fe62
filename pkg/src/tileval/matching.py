"""Greedy one-to-one pairing of annotations and detections by Jaccard index.

Matching is label-agnostic: geometry alone decides the pairing, and label
agreement is evaluated afterwards on the matched pairs (see metrics).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import boxes_to_array, jaccard_elementwise, pairwise_jaccard

__all__ = [
    "JaccardMatrix",
    "MatchResult",
    "jaccard_matrix",
    "greedy_match",
    "overlapping_pairs",
]


@dataclass(frozen=True, eq=False)
class JaccardMatrix:
    """Dense Jaccard values with the row/column index lists they refer to."""

    annotation_ids: tuple[int, ...]
    detection_ids: tuple[int, ...]
    values: np.ndarray


@dataclass(frozen=True)
class MatchResult:
    """One-to-one pairing outcome.

    pairs holds (annotation index, detection index, jaccard) triples;
    unmatched annotations are the false negatives and unmatched detections
    the false positives of the instance.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_annotations: tuple[int, ...]
    unmatched_detections: tuple[int, ...]


def jaccard_matrix(annotations, detections) -> JaccardMatrix:
    """Dense pairwise Jaccard matrix; indices are positions in the inputs.

    Memory is proportional to len(annotations) * len(detections), so this is
    for moderate instances; greedy_match itself never builds it.
    """
    a = boxes_to_array(annotations)
    b = boxes_to_array(detections)
    return JaccardMatrix(
        annotation_ids=tuple(range(a.shape[0])),
        detection_ids=tuple(range(b.shape[0])),
        values=pairwise_jaccard(a, b),
    )


def overlapping_pairs(
    a: np.ndarray, b: np.ndarray, threshold: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All index pairs whose Jaccard index strictly exceeds threshold.

    Returns (rows into a, cols into b, jaccard values) sorted by (row, col).
    Candidate pairs are found by hashing boxes into a coarse grid keyed by
    the largest box side, so sparse scenes cost far less than a dense
    len(a) x len(b) scan; fully overlapping inputs degrade to that product.
    """
    empty = (
        np.empty(0, dtype=np.intp),
        np.empty(0, dtype=np.intp),
        np.empty(0, dtype=np.float64),
    )
    if a.shape[0] == 0 or b.shape[0] == 0:
        return empty

    sides = (
        float(np.max(a[:, 2] - a[:, 0])),
        float(np.max(a[:, 3] - a[:, 1])),
        float(np.max(b[:, 2] - b[:, 0])),
        float(np.max(b[:, 3] - b[:, 1])),
    )
    cell = max(*sides, 1e-9)

    bins: dict[tuple[int, int], list[int]] = {}
    cols_lo = np.floor(a[:, 0] / cell).astype(np.int64)
    cols_hi = np.floor(a[:, 2] / cell).astype(np.int64)
    rows_lo = np.floor(a[:, 1] / cell).astype(np.int64)
    rows_hi = np.floor(a[:, 3] / cell).astype(np.int64)
    for i in range(a.shape[0]):
        for cy in range(rows_lo[i], rows_hi[i] + 1):
            for cx in range(cols_lo[i], cols_hi[i] + 1):
                bins.setdefault((cx, cy), []).append(i)

    b_cols_lo = np.floor(b[:, 0] / cell).astype(np.int64)
    b_cols_hi = np.floor(b[:, 2] / cell).astype(np.int64)
    b_rows_lo = np.floor(b[:, 1] / cell).astype(np.int64)
    b_rows_hi = np.floor(b[:, 3] / cell).astype(np.int64)
    pair_rows: list[int] = []
    pair_cols: list[int] = []
    for j in range(b.shape[0]):
        seen: set[int] = set()
        for cy in range(b_rows_lo[j], b_rows_hi[j] + 1):
            for cx in range(b_cols_lo[j], b_cols_hi[j] + 1):
                hits = bins.get((cx, cy))
                if hits:
                    seen.update(hits)
        if seen:
            pair_rows.extend(seen)
            pair_cols.extend([j] * len(seen))

    if not pair_rows:
        return empty
    rows = np.asarray(pair_rows, dtype=np.intp)
    cols = np.asarray(pair_cols, dtype=np.intp)
    values = jaccard_elementwise(a[rows], b[cols])
    keep = values > threshold
    rows, cols, values = rows[keep], cols[keep], values[keep]
    order = np.lexsort((cols, rows))
    return rows[order], cols[order], values[order]


def greedy_match(annotations, detections, threshold: float = 0.25) -> MatchResult:
    """Pair annotations with detections greedily by descending Jaccard.

    The globally largest remaining Jaccard value wins as long as it strictly
    exceeds threshold; its row and column then leave the pool, so the
    pairing is one-to-one. Exact value ties resolve to the lowest annotation
    index, then the lowest detection index. Inputs may be BBox values or
    objects with a `box` attribute; indices in the result are list positions.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"match threshold out of range: {threshold}")
    a = boxes_to_array(annotations)
    b = boxes_to_array(detections)
    rows, cols, values = overlapping_pairs(a, b, threshold)

    # lexsort uses the last key as primary: descending value, then row, col.
    order = np.lexsort((cols, rows, -values))
    used_a = np.zeros(a.shape[0], dtype=bool)
    used_b = np.zeros(b.shape[0], dtype=bool)
    pairs: list[tuple[int, int, float]] = []
    for k in order:
        i = rows[k]
        j = cols[k]
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = True
        used_b[j] = True
        pairs.append((int(i), int(j), float(values[k])))

    return MatchResult(
        pairs=tuple(pairs),
        unmatched_annotations=tuple(int(i) for i in np.flatnonzero(~used_a)),
        unmatched_detections=tuple(int(j) for j in np.flatnonzero(~used_b)),
    )
