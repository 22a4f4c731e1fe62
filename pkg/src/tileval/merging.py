"""Cross-tiling consolidation: drop cut boxes, then merge the tilings.

A box that touches or crosses an interior tile boundary is only a fragment
of its object, so each tiling keeps just its integral (uncut) detections.
Because complementary offsets leave any sufficiently small object uncut in
at least one scheme, folding the schemes together restores full coverage
without ever inventing geometry: every surviving box is one of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .dataset_io import Detection
from .geometry import area
from .matching import greedy_match
from .tiling import ImageDims, Tile, TilingScheme, default_schemes, is_edge_incident

__all__ = ["MergeConfig", "filter_integral", "merge_tilings"]


@dataclass(frozen=True)
class MergeConfig:
    """Schemes being merged and the Jaccard level that makes two boxes one."""

    merge_threshold: float = 0.25
    schemes: tuple[TilingScheme, ...] = field(default_factory=default_schemes)

    def __post_init__(self) -> None:
        if not 0.0 <= float(self.merge_threshold) <= 1.0:
            raise ValueError(f"merge_threshold out of range: {self.merge_threshold}")
        object.__setattr__(self, "merge_threshold", float(self.merge_threshold))
        if not self.schemes:
            raise ValueError("at least one tiling scheme is required")
        ids = [s.id for s in self.schemes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate scheme ids: {ids}")


def filter_integral(
    detections: Sequence[Detection], tiles: Sequence[Tile], dims: ImageDims
) -> list[Detection]:
    """Keep detections not incident on an interior edge of their own tile.

    Boxes must already be in the image frame and carry tile provenance; the
    provenance selects the tile whose edges are checked. Order is preserved.
    """
    by_index = {(t.scheme_id, t.row, t.col): t for t in tiles}
    kept: list[Detection] = []
    for d in detections:
        if d.tiling_id is None or d.tile_index is None:
            raise ValueError("detection lacks tile provenance; cannot check edges")
        key = (d.tiling_id, d.tile_index[0], d.tile_index[1])
        tile = by_index.get(key)
        if tile is None:
            raise ValueError(f"detection references unknown tile {key}")
        if not is_edge_incident(d.box, tile, dims):
            kept.append(d)
    return kept


def merge_tilings(
    per_scheme: Sequence[Sequence[Detection]], config: MergeConfig
) -> list[Detection]:
    """Fold the per-scheme detection lists into one duplicate-free list.

    per_scheme must parallel config.schemes; folding runs in ascending
    scheme id. At each step the accumulator is matched one-to-one against
    the incoming scheme at merge_threshold: a matched pair keeps whichever
    box has the larger area (the accumulator's on an exact tie), unmatched
    incoming detections are appended, and nothing is ever averaged or
    resized. Inputs are expected integral-filtered, NMS'd, in image frame,
    and from a single image.
    """
    if len(per_scheme) != len(config.schemes):
        raise ValueError(
            f"got {len(per_scheme)} detection lists for {len(config.schemes)} schemes"
        )
    image_ids = {d.image_id for dets in per_scheme for d in dets}
    if len(image_ids) > 1:
        raise ValueError(f"detections span multiple images: {sorted(image_ids)}")

    fold_order = sorted(range(len(per_scheme)), key=lambda k: config.schemes[k].id)
    accumulator = list(per_scheme[fold_order[0]])
    for k in fold_order[1:]:
        incoming = list(per_scheme[k])
        matched = greedy_match(accumulator, incoming, config.merge_threshold)
        merged = list(accumulator)
        for i, j, _ in matched.pairs:
            if area(incoming[j].box) > area(accumulator[i].box):
                merged[i] = incoming[j]
        merged.extend(incoming[j] for j in matched.unmatched_detections)
        accumulator = merged
    return accumulator
