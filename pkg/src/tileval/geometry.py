"""Axis-aligned box arithmetic and the pairwise Jaccard (overlap) index."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "BBox",
    "area",
    "intersection_area",
    "union_area",
    "jaccard",
    "boxes_to_array",
    "pairwise_jaccard",
    "jaccard_elementwise",
]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle spanning (x_min, y_min) to (x_max, y_max).

    Coordinates are real-valued pixels, finite and non-negative. Degenerate
    boxes are rejected at construction, so every instance has positive area.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"non-finite coordinate {name}={value}")
            if value < 0:
                raise ValueError(f"negative coordinate {name}={value}")
            object.__setattr__(self, name, value)
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(
                f"empty box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def translate(self, dx: float, dy: float) -> "BBox":
        """Return this box shifted by (dx, dy)."""
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


def area(box: BBox) -> float:
    """Area of a box in square pixels."""
    return (box.x_max - box.x_min) * (box.y_max - box.y_min)


def intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area of two boxes; 0.0 when disjoint or merely edge-touching."""
    width = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    if width <= 0:
        return 0.0
    height = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if height <= 0:
        return 0.0
    return width * height


def union_area(a: BBox, b: BBox) -> float:
    """Area covered by either box."""
    return area(a) + area(b) - intersection_area(a, b)


def jaccard(a: BBox, b: BBox) -> float:
    """Jaccard index: intersection area over union area, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def boxes_to_array(items: Iterable) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array of (x_min, y_min, x_max, y_max).

    Accepts bare BBox values or objects carrying one in a ``box`` attribute
    (annotations, detections).
    """
    rows = []
    for item in items:
        box = getattr(item, "box", item)
        rows.append((box.x_min, box.y_min, box.x_max, box.y_max))
    if not rows:
        return np.empty((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def _areas(arr: np.ndarray) -> np.ndarray:
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def pairwise_jaccard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense (I, J) matrix of Jaccard indices between two box arrays.

    Memory grows with I*J; intended for moderate instance sizes. Large
    instances should go through the sparse candidate path in `matching`.
    """
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = _areas(a)[:, None] + _areas(b)[None, :] - inter
    return inter / union


def jaccard_elementwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-by-row Jaccard indices between two (K, 4) box arrays."""
    if a.size == 0:
        return np.zeros(0, dtype=np.float64)
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = _areas(a) + _areas(b) - inter
    return inter / union
