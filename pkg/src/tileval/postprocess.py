"""Confidence filtering and greedy non-maximum suppression of detections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset_io import Detection
from .geometry import boxes_to_array
from .matching import overlapping_pairs

__all__ = ["PostprocessConfig", "filter_confidence", "nms", "apply_postprocess"]


@dataclass(frozen=True)
class PostprocessConfig:
    """Detector output post-processing knobs."""

    confidence_threshold: float = 0.7
    nms_threshold: float = 0.25
    per_class_nms: bool = False

    def __post_init__(self) -> None:
        for name in ("confidence_threshold", "nms_threshold"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of range: {value}")
            object.__setattr__(self, name, value)


def filter_confidence(detections: Sequence[Detection], threshold: float) -> list[Detection]:
    """Keep detections with confidence >= threshold, preserving order."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"confidence threshold out of range: {threshold}")
    return [d for d in detections if d.confidence >= threshold]


def nms(
    detections: Sequence[Detection], threshold: float, *, per_class: bool = False
) -> list[Detection]:
    """Greedy non-maximum suppression over one image's detections.

    Detections are visited in descending confidence (ties keep input order);
    each one survives unless some already-kept box overlaps it with Jaccard
    strictly above threshold, so an overlap exactly at the threshold is not
    suppressed. With per_class=True only same-label boxes suppress each
    other. The result is sorted by descending confidence.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"nms threshold out of range: {threshold}")
    n = len(detections)
    if n <= 1:
        return list(detections)

    boxes = boxes_to_array(detections)
    rows, cols, _ = overlapping_pairs(boxes, boxes, threshold)
    off_diagonal = rows != cols
    rows, cols = rows[off_diagonal], cols[off_diagonal]
    if per_class:
        labels = np.asarray([d.label for d in detections])
        same = labels[rows] == labels[cols]
        rows, cols = rows[same], cols[same]

    # CSR-style adjacency: neighbors[start[i]:start[i+1]] conflict with i.
    counts = np.bincount(rows, minlength=n)
    start = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(counts, out=start[1:])
    neighbors = cols[np.argsort(rows, kind="stable")]

    confidences = np.asarray([d.confidence for d in detections])
    order = np.lexsort((np.arange(n), -confidences))
    kept_flag = np.zeros(n, dtype=bool)
    kept: list[Detection] = []
    for k in order:
        adjacent = neighbors[start[k] : start[k + 1]]
        if adjacent.size and kept_flag[adjacent].any():
            continue
        kept_flag[k] = True
        kept.append(detections[k])
    return kept


def apply_postprocess(
    detections: Sequence[Detection], config: PostprocessConfig
) -> list[Detection]:
    """Confidence filter then NMS; the two stages commute for hard NMS."""
    return nms(
        filter_confidence(detections, config.confidence_threshold),
        config.nms_threshold,
        per_class=config.per_class_nms,
    )
