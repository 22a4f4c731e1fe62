"""Pipelines over whole datasets: evaluation, sweeps, tiling runs, and a
seed-deterministic synthetic scene generator with known ground truth."""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset_io import Annotation, ClassSet, Detection, _text_reader, _text_writer
from .geometry import BBox, pairwise_jaccard
from .matching import greedy_match
from .merging import MergeConfig, filter_integral, merge_tilings
from .metrics import (
    ScoreReport,
    confusion,
    confusion_from_counts,
    global_jaccard_sums,
    score_from_counts,
)
from .postprocess import PostprocessConfig, filter_confidence, nms
from .tiling import ImageDims, enumerate_tiles, to_image_frame

__all__ = [
    "GENERATOR_NAME",
    "SEPARATION_IOU",
    "SweepGrid",
    "SweepResult",
    "SynthConfig",
    "Provenance",
    "SynthScene",
    "default_confidence_grid",
    "default_nms_grid",
    "evaluate",
    "sweep",
    "end_to_end",
    "synth_scene",
    "write_provenance",
    "load_provenance",
]

# Random generator identity, recorded in generated file headers so scenes
# can be reproduced by any implementation of the same generator.
GENERATOR_NAME = "numpy-pcg64"

# Maximum pairwise overlap allowed when placing synthetic boxes.
SEPARATION_IOU = 0.1

_PLACEMENT_ATTEMPTS = 1000

PROVENANCE_HEADER = ("kind", "annotation_id", "detection_id")


def _threshold_grid(start: float, stop: float, step: float) -> tuple[float, ...]:
    values = []
    k = 0
    while True:
        value = round(start + k * step, 9)
        if value > stop + 1e-12:
            break
        values.append(value)
        k += 1
    return tuple(values)


def default_confidence_grid() -> tuple[float, ...]:
    """Confidence sweep values 0.35 to 0.90 in steps of 0.05."""
    return _threshold_grid(0.35, 0.90, 0.05)


def default_nms_grid() -> tuple[float, ...]:
    """Suppression sweep values: 0.005, then 0.05 to 0.50 in steps of 0.05."""
    return (0.005,) + _threshold_grid(0.05, 0.50, 0.05)


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian grid of confidence and NMS thresholds to score."""

    confidence_values: tuple[float, ...] = field(default_factory=default_confidence_grid)
    nms_values: tuple[float, ...] = field(default_factory=default_nms_grid)

    def __post_init__(self) -> None:
        for name in ("confidence_values", "nms_values"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            if any(not 0.0 <= v <= 1.0 for v in values):
                raise ValueError(f"{name} must lie in [0, 1]: {values}")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly increasing: {values}")
            object.__setattr__(self, name, values)


@dataclass(frozen=True)
class SweepResult:
    """Per-cell reports plus the argmax cell by F1.

    cells are (confidence, nms, report) in row-major grid order. Ties on F1
    resolve to the lowest confidence, then the lowest NMS threshold.
    """

    cells: tuple[tuple[float, float, ScoreReport], ...]
    best: tuple[float, float]


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic scene layout and corruption parameters.

    Ground-truth boxes are rejection-sampled until pairwise overlap stays
    at or below SEPARATION_IOU. A round(n_objects * miss_rate) subset is
    dropped, survivors are translated by per-axis offsets drawn up to
    jitter_frac of the box side (then clamped into the image), labels are
    re-drawn per the row-stochastic label_confusion matrix (identity when
    None), and round(n_objects * spurious_rate) extra boxes are placed away
    from all ground truth. With jitter_frac below 0.3 every surviving
    detection overlaps its own ground truth above 0.25. Counts use Python
    round, which is banker's rounding at exact halves.
    """

    dims: ImageDims = field(default_factory=lambda: ImageDims(6000, 4000))
    n_objects: int = 1000
    side_range: tuple[float, float] = (10.0, 80.0)
    miss_rate: float = 0.1
    spurious_rate: float = 0.05
    jitter_frac: float = 0.2
    label_confusion: tuple[tuple[float, ...], ...] | None = None
    confidence_range: tuple[float, float] = (0.7, 1.0)
    classes: ClassSet = field(default_factory=lambda: ClassSet(("mango",)))
    seed: int = 0
    image_id: str = "synthetic"

    def __post_init__(self) -> None:
        if self.n_objects < 0:
            raise ValueError(f"n_objects must be non-negative: {self.n_objects}")
        lo, hi = (float(v) for v in self.side_range)
        if not 0 < lo <= hi:
            raise ValueError(f"invalid side_range: {self.side_range}")
        if hi > min(self.dims.width, self.dims.height):
            raise ValueError(f"side_range {self.side_range} exceeds image {self.dims}")
        object.__setattr__(self, "side_range", (lo, hi))
        for name in ("miss_rate", "spurious_rate"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of range: {value}")
            object.__setattr__(self, name, value)
        if float(self.jitter_frac) < 0:
            raise ValueError(f"jitter_frac must be non-negative: {self.jitter_frac}")
        object.__setattr__(self, "jitter_frac", float(self.jitter_frac))
        clo, chi = (float(v) for v in self.confidence_range)
        if not 0.0 <= clo <= chi <= 1.0:
            raise ValueError(f"invalid confidence_range: {self.confidence_range}")
        object.__setattr__(self, "confidence_range", (clo, chi))
        if self.label_confusion is not None:
            k = len(self.classes)
            matrix = tuple(tuple(float(v) for v in row) for row in self.label_confusion)
            if len(matrix) != k or any(len(row) != k for row in matrix):
                raise ValueError(f"label_confusion must be {k}x{k}")
            for row in matrix:
                if any(v < 0 for v in row):
                    raise ValueError(f"label_confusion entries must be non-negative: {row}")
                if abs(sum(row) - 1.0) > 1e-9:
                    raise ValueError(f"label_confusion rows must sum to 1: {row}")
            object.__setattr__(self, "label_confusion", matrix)


@dataclass(frozen=True)
class Provenance:
    """Intended correspondence of a synthetic scene.

    matched holds (annotation index, detection index) pairs; missed lists
    annotations with no detection; spurious lists detections with no
    annotation. Indices are row positions in the generated lists.
    """

    matched: tuple[tuple[int, int], ...]
    missed: tuple[int, ...]
    spurious: tuple[int, ...]


@dataclass(frozen=True)
class SynthScene:
    annotations: tuple[Annotation, ...]
    detections: tuple[Detection, ...]
    provenance: Provenance


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads < 1:
        raise ValueError(f"threads must be at least 1: {threads}")
    if threads == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _group_by_image(items: Iterable) -> dict[str, list]:
    groups: dict[str, list] = {}
    for item in items:
        groups.setdefault(item.image_id, []).append(item)
    return groups


def _config_echo(
    confidence_threshold: float, nms_threshold: float, match_threshold: float
) -> dict[str, float]:
    return {
        "confidence_threshold": float(confidence_threshold),
        "nms_threshold": float(nms_threshold),
        "match_threshold": float(match_threshold),
    }


def _aggregate(
    per_image: Sequence[tuple],
    alpha: float,
    classes: ClassSet | None,
    config_echo: dict[str, float],
) -> ScoreReport:
    """Reduce per-image (match, annotations, detections) triples into one
    report: counts add up, ratios are recomputed from the totals."""
    tp = fp = fn = 0
    numerator = denominator = 0.0
    k = len(classes) if classes is not None else 0
    counts = [[0] * k for _ in range(k)]
    for match, annotations, detections in per_image:
        tp += len(match.pairs)
        fn += len(match.unmatched_annotations)
        fp += len(match.unmatched_detections)
        num, den = global_jaccard_sums(match, annotations, detections, alpha)
        numerator += num
        denominator += den
        if classes is not None:
            image_counts = confusion(match, annotations, detections, classes).counts
            for e in range(k):
                for n in range(k):
                    counts[e][n] += image_counts[e][n]
    report = score_from_counts(tp, fp, fn)
    return replace(
        report,
        j_alpha=(float(alpha), numerator / denominator if denominator > 0 else 0.0),
        confusion=confusion_from_counts(counts, classes) if classes is not None else None,
        config=config_echo,
    )


def evaluate(
    annotations: Sequence[Annotation],
    detections: Sequence[Detection],
    config: PostprocessConfig = PostprocessConfig(),
    *,
    match_threshold: float = 0.25,
    alpha: float = 0.0,
    classes: ClassSet | None = None,
    threads: int = 1,
) -> ScoreReport:
    """Score detections against annotations image by image.

    Each image's detections go through confidence filtering and NMS, are
    matched one-to-one against that image's annotations, and the per-image
    outcomes are summed before the ratios are computed. Images only ever
    see their own boxes, so work parallelizes over images without changing
    any result.
    """
    ann_groups = _group_by_image(annotations)
    det_groups = _group_by_image(detections)
    images = sorted(set(ann_groups) | set(det_groups))

    def _one(image: str):
        anns = ann_groups.get(image, [])
        dets = det_groups.get(image, [])
        kept = nms(
            filter_confidence(dets, config.confidence_threshold),
            config.nms_threshold,
            per_class=config.per_class_nms,
        )
        return greedy_match(anns, kept, match_threshold), anns, kept

    per_image = _parallel_map(_one, images, threads)
    echo = _config_echo(config.confidence_threshold, config.nms_threshold, match_threshold)
    return _aggregate(per_image, alpha, classes, echo)


def sweep(
    annotations: Sequence[Annotation],
    detections: Sequence[Detection],
    grid: SweepGrid = SweepGrid(),
    *,
    match_threshold: float = 0.25,
    classes: ClassSet | None = None,
    per_class_nms: bool = False,
    threads: int = 1,
) -> SweepResult:
    """Score every (confidence, nms) grid cell and pick the best by F1.

    Cell reports carry the global Jaccard at alpha=0. The argmax prefers
    the lowest confidence and then the lowest NMS threshold on exact F1
    ties. Cells are independent, so they parallelize freely.
    """
    cells = [(c, n) for c in grid.confidence_values for n in grid.nms_values]

    def _one(cell: tuple[float, float]) -> ScoreReport:
        conf_value, nms_value = cell
        return evaluate(
            annotations,
            detections,
            PostprocessConfig(conf_value, nms_value, per_class_nms),
            match_threshold=match_threshold,
            alpha=0.0,
            classes=classes,
            threads=1,
        )

    reports = _parallel_map(_one, cells, threads)
    best = cells[0]
    best_f1 = reports[0].f1
    for cell, report in zip(cells, reports):
        if report.f1 > best_f1:
            best, best_f1 = cell, report.f1
    return SweepResult(
        cells=tuple((c, n, report) for (c, n), report in zip(cells, reports)),
        best=best,
    )


def _prepare_schemes(
    per_scheme: Sequence[Sequence[Detection]],
    dims: ImageDims,
    post: PostprocessConfig,
    merge: MergeConfig,
) -> list[dict[str, list[Detection]]]:
    """Per scheme: per-tile confidence filter and NMS in the tile frame,
    translation into the image frame, then the edge-incidence filter.
    Returns one image-keyed mapping per scheme."""
    if len(per_scheme) != len(merge.schemes):
        raise ValueError(
            f"got {len(per_scheme)} detection lists for {len(merge.schemes)} schemes"
        )

    prepared: list[dict[str, list[Detection]]] = []
    for scheme, dets in zip(merge.schemes, per_scheme):
        tiles = enumerate_tiles(dims, scheme)
        by_index = {(t.row, t.col): t for t in tiles}
        groups: dict[tuple[str, tuple[int, int]], list[Detection]] = {}
        for d in dets:
            if d.tiling_id is None or d.tile_index is None:
                raise ValueError("tiled pipeline needs tile provenance on detections")
            if d.tiling_id != scheme.id:
                raise ValueError(
                    f"detection carries tiling_id {d.tiling_id}, expected {scheme.id}"
                )
            groups.setdefault((d.image_id, d.tile_index), []).append(d)

        in_image_frame: dict[str, list[Detection]] = {}
        for (image, tile_index), tile_dets in sorted(groups.items()):
            tile = by_index.get(tile_index)
            if tile is None:
                raise ValueError(f"detection references unknown tile {tile_index}")
            kept = nms(
                filter_confidence(tile_dets, post.confidence_threshold),
                post.nms_threshold,
                per_class=post.per_class_nms,
            )
            moved = [replace(d, box=to_image_frame(d.box, tile)) for d in kept]
            in_image_frame.setdefault(image, []).extend(moved)

        prepared.append(
            {
                image: filter_integral(dets_i, tiles, dims)
                for image, dets_i in in_image_frame.items()
            }
        )
    return prepared


def merge_detections(
    per_scheme: Sequence[Sequence[Detection]],
    dims: ImageDims,
    post: PostprocessConfig = PostprocessConfig(),
    merge: MergeConfig = MergeConfig(),
) -> dict[str, list[Detection]]:
    """Run the tiled pipeline up to and including the cross-tiling merge.

    Input lists parallel merge.schemes and hold raw tile-frame detections
    with tile provenance. Returns the merged detections per image.
    """
    prepared = _prepare_schemes(per_scheme, dims, post, merge)
    images = sorted({image for scheme in prepared for image in scheme})
    return {
        image: merge_tilings([scheme.get(image, []) for scheme in prepared], merge)
        for image in images
    }


def end_to_end(
    annotations: Sequence[Annotation],
    per_scheme: Sequence[Sequence[Detection]],
    dims: ImageDims,
    *,
    post: PostprocessConfig = PostprocessConfig(),
    merge: MergeConfig = MergeConfig(),
    match_threshold: float = 0.25,
    alpha: float = 0.0,
    classes: ClassSet | None = None,
    threads: int = 1,
) -> ScoreReport:
    """Full tiled pipeline: per-tile post-processing, edge filtering,
    cross-tiling merge, then matching and metrics.

    per_scheme must parallel merge.schemes and hold raw tile-frame
    detections with tile provenance. Per tile, detections are confidence
    filtered and NMS'd, then moved to the image frame; edge-incident boxes
    are dropped per scheme; per image, the schemes are folded into one
    detection list that is scored against the annotations.
    """
    merged_by_image = merge_detections(per_scheme, dims, post, merge)
    ann_groups = _group_by_image(annotations)
    images = sorted(set(ann_groups) | set(merged_by_image))

    def _one(image: str):
        merged = merged_by_image.get(image, [])
        anns = ann_groups.get(image, [])
        return greedy_match(anns, merged, match_threshold), anns, merged

    per_image = _parallel_map(_one, images, threads)
    echo = _config_echo(post.confidence_threshold, post.nms_threshold, match_threshold)
    return _aggregate(per_image, alpha, classes, echo)


def confusion_report(
    annotations: Sequence[Annotation],
    detections: Sequence[Detection],
    config: PostprocessConfig = PostprocessConfig(),
    *,
    match_threshold: float = 0.25,
    classes: ClassSet,
    threads: int = 1,
):
    """Confusion matrix plus per-class recall for a detection run.

    Runs the same per-image pipeline as evaluate and aggregates label
    agreement over matched pairs; recall is matched annotations over all
    annotations, per class.
    """
    ann_groups = _group_by_image(annotations)
    det_groups = _group_by_image(detections)
    images = sorted(set(ann_groups) | set(det_groups))

    def _one(image: str):
        anns = ann_groups.get(image, [])
        dets = det_groups.get(image, [])
        kept = nms(
            filter_confidence(dets, config.confidence_threshold),
            config.nms_threshold,
            per_class=config.per_class_nms,
        )
        return greedy_match(anns, kept, match_threshold), anns, kept

    k = len(classes)
    counts = [[0] * k for _ in range(k)]
    matched_per_class = [0] * k
    total_per_class = [0] * k
    for match, anns, dets in _parallel_map(_one, images, threads):
        image_counts = confusion(match, anns, dets, classes).counts
        for e in range(k):
            for n in range(k):
                counts[e][n] += image_counts[e][n]
        matched_ids = {i for i, _, _ in match.pairs}
        for index, annotation in enumerate(anns):
            e = classes.index(annotation.label)
            total_per_class[e] += 1
            if index in matched_ids:
                matched_per_class[e] += 1
    recall = {
        name: (matched_per_class[e] / total_per_class[e] if total_per_class[e] else 0.0)
        for e, name in enumerate(classes.names)
    }
    return confusion_from_counts(counts, classes), recall


def _place_separated(
    rng: np.random.Generator,
    count: int,
    dims: ImageDims,
    side_range: tuple[float, float],
    fixed: np.ndarray,
) -> np.ndarray:
    """Rejection-sample `count` boxes overlapping each other and `fixed` by
    at most SEPARATION_IOU. Raises when the scene is too dense to place."""
    lo, hi = side_range
    placed = np.empty((count, 4), dtype=np.float64)
    for i in range(count):
        for _ in range(_PLACEMENT_ATTEMPTS):
            w = rng.uniform(lo, hi)
            h = rng.uniform(lo, hi)
            x0 = rng.uniform(0.0, dims.width - w)
            y0 = rng.uniform(0.0, dims.height - h)
            candidate = np.array([[x0, y0, x0 + w, y0 + h]])
            if fixed.shape[0] and pairwise_jaccard(candidate, fixed).max() > SEPARATION_IOU:
                continue
            if i and pairwise_jaccard(candidate, placed[:i]).max() > SEPARATION_IOU:
                continue
            placed[i] = candidate[0]
            break
        else:
            raise ValueError(
                f"could not place box {i + 1} of {count} after {_PLACEMENT_ATTEMPTS} "
                "attempts; lower the object count or enlarge the image"
            )
    return placed


def synth_scene(config: SynthConfig) -> SynthScene:
    """Generate a synthetic scene with exactly known correspondence.

    The generator is numpy's PCG64 seeded with config.seed, consumed in a
    fixed order (placement, labels, misses, jitter, label flips, spurious
    boxes, confidences), so equal configs give byte-equal scenes.
    """
    if config.jitter_frac >= 0.3:
        warnings.warn(
            "jitter_frac >= 0.3 can push detections below a 0.25 overlap with "
            "their own ground truth; exact provenance recovery is no longer "
            "guaranteed",
            stacklevel=2,
        )
    rng = np.random.Generator(np.random.PCG64(config.seed))
    k = len(config.classes)
    n = config.n_objects

    gt_boxes = _place_separated(
        rng, n, config.dims, config.side_range, np.empty((0, 4), dtype=np.float64)
    )
    gt_labels = rng.integers(0, k, size=n)

    n_missed = round(n * config.miss_rate)
    missed = np.sort(rng.choice(n, size=n_missed, replace=False)) if n_missed else np.empty(0, dtype=np.int64)
    missed_set = set(int(i) for i in missed)
    survivors = np.asarray([i for i in range(n) if i not in missed_set], dtype=np.int64)
    s = survivors.size

    widths = gt_boxes[survivors, 2] - gt_boxes[survivors, 0]
    heights = gt_boxes[survivors, 3] - gt_boxes[survivors, 1]
    offsets = rng.uniform(-1.0, 1.0, size=(s, 2)) * np.column_stack(
        (widths, heights)
    ) * config.jitter_frac
    base = gt_boxes[survivors]
    # clamp the shift so the moved box stays inside the image; a smaller
    # shift only increases overlap with the source box
    dx = np.clip(offsets[:, 0], -base[:, 0], config.dims.width - base[:, 2])
    dy = np.clip(offsets[:, 1], -base[:, 1], config.dims.height - base[:, 3])
    det_boxes = base + np.column_stack((dx, dy, dx, dy))

    if config.label_confusion is None:
        det_labels = gt_labels[survivors].copy()
    else:
        cumulative = np.cumsum(np.asarray(config.label_confusion, dtype=np.float64), axis=1)
        draws = rng.random(s)
        rows = cumulative[gt_labels[survivors]]
        det_labels = np.minimum((rows <= draws[:, None]).sum(axis=1), k - 1)

    n_spurious = round(n * config.spurious_rate)
    spurious_boxes = _place_separated(rng, n_spurious, config.dims, config.side_range, gt_boxes)
    spurious_labels = rng.integers(0, k, size=n_spurious)

    clo, chi = config.confidence_range
    confidences = rng.uniform(clo, chi, size=s + n_spurious)

    names = config.classes.names
    annotations = tuple(
        Annotation(
            image_id=config.image_id,
            box=BBox(*gt_boxes[i]),
            label=names[int(gt_labels[i])],
            id=i,
        )
        for i in range(n)
    )
    detections = []
    for pos in range(s):
        detections.append(
            Detection(
                image_id=config.image_id,
                box=BBox(*det_boxes[pos]),
                label=names[int(det_labels[pos])],
                confidence=float(confidences[pos]),
            )
        )
    for pos in range(n_spurious):
        detections.append(
            Detection(
                image_id=config.image_id,
                box=BBox(*spurious_boxes[pos]),
                label=names[int(spurious_labels[pos])],
                confidence=float(confidences[s + pos]),
            )
        )

    provenance = Provenance(
        matched=tuple((int(survivors[pos]), pos) for pos in range(s)),
        missed=tuple(int(i) for i in missed),
        spurious=tuple(range(s, s + n_spurious)),
    )
    return SynthScene(tuple(annotations), tuple(detections), provenance)


def write_provenance(provenance: Provenance, sink, comments: Sequence[str] = ()) -> None:
    """Write the correspondence table as CSV (kind, annotation, detection)."""
    with _text_writer(sink) as stream:
        for comment in comments:
            stream.write(f"# {comment}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(PROVENANCE_HEADER)
        for i, j in provenance.matched:
            writer.writerow(("match", i, j))
        for i in provenance.missed:
            writer.writerow(("missed", i, ""))
        for j in provenance.spurious:
            writer.writerow(("spurious", "", j))


def load_provenance(source) -> Provenance:
    """Read a provenance CSV written by write_provenance."""
    from .dataset_io import LoadError, _data_rows

    matched: list[tuple[int, int]] = []
    missed: list[int] = []
    spurious: list[int] = []
    with _text_reader(source) as stream:
        rows = _data_rows(stream)
        first = next(rows, None)
        if first is None:
            return Provenance((), (), ())
        if first[1] != list(PROVENANCE_HEADER):
            raise LoadError(f"missing or invalid header: {','.join(first[1])!r}", first[0])
        for line, cells in rows:
            if len(cells) != 3:
                raise LoadError(f"expected 3 columns, got {len(cells)}", line)
            kind = cells[0]
            try:
                if kind == "match":
                    matched.append((int(cells[1]), int(cells[2])))
                elif kind == "missed":
                    missed.append(int(cells[1]))
                elif kind == "spurious":
                    spurious.append(int(cells[2]))
                else:
                    raise LoadError(f"unknown provenance kind {kind!r}", line)
            except ValueError as exc:
                if isinstance(exc, LoadError):
                    raise
                raise LoadError(f"malformed provenance row: {','.join(cells)!r}", line) from None
    return Provenance(tuple(matched), tuple(missed), tuple(spurious))
