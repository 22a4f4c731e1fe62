"""Offset tilings of an image and the tile-edge incidence rule.

A tiling scheme cuts the image into a row-major grid of tile_size squares
starting at (offset_x, offset_y). Nonzero offsets produce partial leading
strips, and images whose extent is not a multiple of tile_size produce
partial trailing tiles; partial tiles are clipped to the image, never
padded, so every scheme covers the image exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .geometry import BBox, intersection_area

__all__ = [
    "ImageDims",
    "TilingScheme",
    "Tile",
    "EDGE_TOLERANCE",
    "default_schemes",
    "schemes_from_offsets",
    "enumerate_tiles",
    "to_image_frame",
    "to_tile_frame",
    "is_edge_incident",
    "assign_to_tiles",
]

# Coordinate slack when testing whether a box touches a tile boundary.
EDGE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ImageDims:
    """Full image extent in pixels."""

    width: float
    height: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "height", float(self.height))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive: {self.width}x{self.height}")


@dataclass(frozen=True)
class TilingScheme:
    """One tiling grid, identified by `id` and anchored at its offsets."""

    id: int
    offset_x: float
    offset_y: float
    tile_size: float = 500.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "offset_x", float(self.offset_x))
        object.__setattr__(self, "offset_y", float(self.offset_y))
        object.__setattr__(self, "tile_size", float(self.tile_size))
        if self.tile_size <= 0:
            raise ValueError(f"tile_size must be positive: {self.tile_size}")
        for name in ("offset_x", "offset_y"):
            value = getattr(self, name)
            if not 0 <= value < self.tile_size:
                raise ValueError(f"{name} must lie in [0, tile_size): {value}")


@dataclass(frozen=True)
class Tile:
    """One grid cell of a scheme, with its rectangle in image coordinates."""

    scheme_id: int
    row: int
    col: int
    rect: BBox


def default_schemes(tile_size: float = 500.0) -> tuple[TilingScheme, ...]:
    """The four standard schemes: offsets of 0 and tile_size/2 on each axis."""
    half = tile_size / 2.0
    offsets = ((0.0, 0.0), (0.0, half), (half, 0.0), (half, half))
    return tuple(
        TilingScheme(i + 1, ox, oy, tile_size) for i, (ox, oy) in enumerate(offsets)
    )


def schemes_from_offsets(
    offsets: Sequence[tuple[float, float]], tile_size: float = 500.0
) -> tuple[TilingScheme, ...]:
    """Build schemes with ids 1..n from (offset_x, offset_y) pairs."""
    return tuple(
        TilingScheme(i + 1, ox, oy, tile_size) for i, (ox, oy) in enumerate(offsets)
    )


def _axis_cuts(length: float, tile_size: float, offset: float) -> list[float]:
    """Grid boundaries along one axis: 0, the offset strip, then every
    tile_size up to the image edge."""
    cuts = [0.0]
    position = offset if offset > 0 else tile_size
    while position < length:
        cuts.append(float(position))
        position += tile_size
    cuts.append(float(length))
    return cuts


def enumerate_tiles(dims: ImageDims, scheme: TilingScheme) -> list[Tile]:
    """All tiles of a scheme in row-major order (top row first)."""
    x_cuts = _axis_cuts(dims.width, scheme.tile_size, scheme.offset_x)
    y_cuts = _axis_cuts(dims.height, scheme.tile_size, scheme.offset_y)
    tiles = []
    for row in range(len(y_cuts) - 1):
        for col in range(len(x_cuts) - 1):
            rect = BBox(x_cuts[col], y_cuts[row], x_cuts[col + 1], y_cuts[row + 1])
            tiles.append(Tile(scheme.id, row, col, rect))
    return tiles


def to_image_frame(box: BBox, tile: Tile) -> BBox:
    """Translate a tile-frame box into image coordinates.

    The box must lie within the tile extents [0, width] x [0, height].
    """
    rect = tile.rect
    if box.x_max > rect.width + EDGE_TOLERANCE or box.y_max > rect.height + EDGE_TOLERANCE:
        raise ValueError(
            f"box ({box.x_min}, {box.y_min}, {box.x_max}, {box.y_max}) "
            f"outside tile extents {rect.width}x{rect.height}"
        )
    return box.translate(rect.x_min, rect.y_min)


def to_tile_frame(box: BBox, tile: Tile) -> BBox:
    """Translate an image-frame box into tile coordinates (inverse of
    to_image_frame). The box must lie within the tile rectangle."""
    rect = tile.rect
    if (
        box.x_min < rect.x_min - EDGE_TOLERANCE
        or box.y_min < rect.y_min - EDGE_TOLERANCE
        or box.x_max > rect.x_max + EDGE_TOLERANCE
        or box.y_max > rect.y_max + EDGE_TOLERANCE
    ):
        raise ValueError(
            f"box ({box.x_min}, {box.y_min}, {box.x_max}, {box.y_max}) "
            f"outside tile ({rect.x_min}, {rect.y_min}, {rect.x_max}, {rect.y_max})"
        )
    return box.translate(-rect.x_min, -rect.y_min)


def is_edge_incident(box: BBox, tile: Tile, dims: ImageDims, tol: float = EDGE_TOLERANCE) -> bool:
    """True when an image-frame box touches or crosses a tile boundary.

    Tile edges that coincide with the image border do not count: an object
    at the image edge is as whole as it can ever be, so only interior grid
    boundaries mark a box as cut.
    """
    rect = tile.rect
    if box.x_min <= rect.x_min + tol and rect.x_min > tol:
        return True
    if box.x_max >= rect.x_max - tol and rect.x_max < dims.width - tol:
        return True
    if box.y_min <= rect.y_min + tol and rect.y_min > tol:
        return True
    if box.y_max >= rect.y_max - tol and rect.y_max < dims.height - tol:
        return True
    return False


def assign_to_tiles(objects: Iterable, tiles: Sequence[Tile]) -> dict[Tile, list]:
    """Group objects under every tile their box overlaps with positive area.

    Accepts bare BBox values or objects carrying one in a `box` attribute.
    Boxes that only touch a tile edge from outside are not assigned to it.
    """
    assignment: dict[Tile, list] = {tile: [] for tile in tiles}
    for obj in objects:
        box = getattr(obj, "box", obj)
        for tile in tiles:
            if intersection_area(box, tile.rect) > 0.0:
                assignment[tile].append(obj)
    return assignment
