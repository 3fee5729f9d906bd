"""Parse cell instance-segmentation output and the cortical ROI mask.

Canonical cell input is a JSON polygon file; 16-bit PGM label rasters are the
alternative (cells recovered by crack-boundary tracing so polygon area equals
pixel count exactly). The ROI mask is an 8-bit PGM with codes 0..3.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .pgmio import read_pgm, write_pgm

OUTSIDE = 0
INTERIOR = 1
SUPERIOR = 2
INFERIOR = 3

_MASK_CODES = frozenset((OUTSIDE, INTERIOR, SUPERIOR, INFERIOR))


def polygon_area(polygon: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    x, y = polygon[:, 0], polygon[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def polygon_centroid(polygon: np.ndarray) -> tuple[float, float]:
    """Area-weighted centroid of a simple polygon (shoelace-based)."""
    x, y = polygon[:, 0], polygon[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    return cx, cy


def _segments_self_intersect(polygon: np.ndarray) -> bool:
    """Check whether any two non-adjacent edges of the polygon intersect."""
    m = len(polygon)
    p = polygon
    q = np.roll(polygon, -1, axis=0)

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
            b[..., 1] - a[..., 1]
        ) * (c[..., 0] - a[..., 0])

    for i in range(m - 2):
        # edges j non-adjacent to i (skip i-1, i, i+1; wrap for i == 0)
        j0 = i + 2
        j1 = m if i > 0 else m - 1
        if j0 >= j1:
            continue
        a, b = p[i], q[i]
        c, d = p[j0:j1], q[j0:j1]
        d1 = orient(a[None, :], b[None, :], c)
        d2 = orient(a[None, :], b[None, :], d)
        d3 = orient(c, d, a[None, :])
        d4 = orient(c, d, b[None, :])
        proper = (d1 * d2 < 0) & (d3 * d4 < 0)
        if np.any(proper):
            return True
        # collinear touching of non-adjacent edges also breaks simplicity
        touch = (d1 == 0) & _on_segment(a, b, c)
        touch |= (d2 == 0) & _on_segment(a, b, d)
        touch |= (d3 == 0) & _on_segment_arr(c, d, a)
        touch |= (d4 == 0) & _on_segment_arr(c, d, b)
        if np.any(touch):
            return True
    return False


def _on_segment(a, b, pts) -> np.ndarray:
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return np.all((pts >= lo) & (pts <= hi), axis=-1)


def _on_segment_arr(c, d, pt) -> np.ndarray:
    lo = np.minimum(c, d)
    hi = np.maximum(c, d)
    return np.all((pt >= lo) & (pt <= hi), axis=-1)


@dataclass(frozen=True)
class Cell:
    """One segmented cell: integer id and a simple CCW polygon in pixel units."""

    id: int
    polygon: np.ndarray  # (m, 2) float64, counter-clockwise
    centroid: tuple[float, float] = field(init=False)

    def __post_init__(self):
        poly = np.asarray(self.polygon, dtype=np.float64)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise ValidationError(f"cell {self.id}: polygon needs >= 3 (x, y) vertices")
        if not np.all(np.isfinite(poly)):
            raise ValidationError(f"cell {self.id}: non-finite vertex")
        if self.id < 0:
            raise ValidationError(f"cell id {self.id} is negative")
        area = polygon_area(poly)
        if area < 0:  # normalize to counter-clockwise
            poly = poly[::-1].copy()
            area = -area
        if area <= 0:
            raise ValidationError(f"cell {self.id}: polygon area is zero")
        if _segments_self_intersect(poly):
            raise ValidationError(f"cell {self.id}: polygon self-intersects")
        object.__setattr__(self, "polygon", poly)
        cx, cy = polygon_centroid(poly)
        lo = poly.min(axis=0)
        hi = poly.max(axis=0)
        if not (lo[0] <= cx <= hi[0] and lo[1] <= cy <= hi[1]):
            raise ValidationError(f"cell {self.id}: centroid outside bounding box")
        object.__setattr__(self, "centroid", (cx, cy))

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)


@dataclass(frozen=True)
class CellSet:
    """All cells of one slice plus the pixel extent of the source image."""

    cells: list[Cell]
    image_extent: tuple[int, int]  # (width, height)

    def __post_init__(self):
        if len(self.cells) < 1:
            raise ValidationError("CellSet needs at least one cell")
        ids = [c.id for c in self.cells]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i in set(ids) if ids.count(i) > 1)[0]
            raise ValidationError(f"duplicate cell id {dup}")
        w, h = self.image_extent
        for c in self.cells:
            p = c.polygon
            if p[:, 0].min() < 0 or p[:, 1].min() < 0 or p[:, 0].max() > w or p[:, 1].max() > h:
                raise ValidationError(
                    f"cell {c.id}: polygon vertex outside image extent {w}x{h}"
                )

    @property
    def n(self) -> int:
        return len(self.cells)

    def centroids(self) -> np.ndarray:
        """(n, 2) array of centroids in cell order."""
        return np.array([c.centroid for c in self.cells], dtype=np.float64)


@dataclass(frozen=True)
class RoiMask:
    """Rasterized cortical region; codes 0=outside 1=interior 2=superior 3=inferior."""

    codes: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.uint8)
        if codes.ndim != 2:
            raise ValidationError("mask must be a 2-D raster")
        bad = set(np.unique(codes)) - _MASK_CODES
        if bad:
            raise ValidationError(f"mask contains invalid code(s) {sorted(bad)}")
        if not np.any(codes == SUPERIOR):
            raise ValidationError("no superior boundary (code 2) pixels in mask")
        if not np.any(codes == INFERIOR):
            raise ValidationError("no inferior boundary (code 3) pixels in mask")
        interior = codes == INTERIOR
        if np.any(interior):
            non_outside = codes != OUTSIDE
            padded = np.zeros((codes.shape[0] + 2, codes.shape[1] + 2), dtype=bool)
            padded[1:-1, 1:-1] = non_outside
            has_nbr = (
                padded[:-2, 1:-1] | padded[2:, 1:-1] | padded[1:-1, :-2] | padded[1:-1, 2:]
            )
            if np.any(interior & ~has_nbr):
                raise ValidationError("interior pixel with no non-outside 4-neighbor")
        object.__setattr__(self, "codes", codes)

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    @property
    def height(self) -> int:
        return self.codes.shape[0]


def load_cells(path: str | Path, format: str = "json-polygons") -> CellSet:
    """Load a CellSet from JSON polygons or a 16-bit PGM label raster."""
    path = Path(path)
    if format == "json-polygons":
        return _load_cells_json(path)
    if format == "label-raster":
        return _load_cells_raster(path)
    raise ValueError(f"unknown cell format {format!r}")


def _load_cells_json(path: Path) -> CellSet:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict) or "cells" not in doc or "image_extent" not in doc:
        raise ParseError(f"{path}: expected object with 'image_extent' and 'cells'")
    extent = doc["image_extent"]
    if not (isinstance(extent, list) and len(extent) == 2):
        raise ParseError(f"{path}: image_extent must be [width, height]")
    cells = []
    for k, rec in enumerate(doc["cells"]):
        try:
            cid = rec["id"]
            poly = np.asarray(rec["polygon"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: cells[{k}] malformed: {exc}") from exc
        if not isinstance(cid, int):
            raise ParseError(f"{path}: cells[{k}] id must be an integer")
        cells.append(Cell(id=cid, polygon=poly))
    return CellSet(cells=cells, image_extent=(int(extent[0]), int(extent[1])))


def save_cells(cellset: CellSet, path: str | Path) -> None:
    """Write the JSON polygon format; floats round-trip bit-for-bit via repr."""
    doc = {
        "image_extent": [cellset.image_extent[0], cellset.image_extent[1]],
        "cells": [
            {"id": c.id, "polygon": [[float(x), float(y)] for x, y in c.polygon]}
            for c in cellset.cells
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


# Crack-boundary tracing: walk pixel-corner lattice keeping the region on the
# right. Headings are E,S,W,N; the table gives the (row, col) offsets from the
# corner of the forward-right and forward-left pixels for each heading.
_HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # E, S, W, N as (dx, dy)
_RIGHT_PIXEL = ((0, 0), (0, -1), (-1, -1), (-1, 0))
_LEFT_PIXEL = ((-1, 0), (0, 0), (0, -1), (-1, -1))


def trace_region_boundary(region: np.ndarray) -> np.ndarray:
    """Outer boundary polygon (pixel-corner coords) of a 4-connected pixel region.

    The traced polygon's shoelace area equals the region's pixel count exactly.
    """
    rows, cols = np.nonzero(region)
    r0 = rows.min()
    c0 = cols[rows == r0].min()

    def inside(r: int, c: int) -> bool:
        return 0 <= r < region.shape[0] and 0 <= c < region.shape[1] and region[r, c]

    x, y = int(c0), int(r0)
    heading = 0  # east along the top edge of the top-left-most pixel
    anchor = None  # first post-advance state; the walk is periodic from there
    vertices: list[tuple[int, int]] = []
    for _ in range(4 * (region.size + 4)):
        dr, dc = _RIGHT_PIXEL[heading]
        right_in = inside(y + dr, x + dc)
        dr, dc = _LEFT_PIXEL[heading]
        left_in = inside(y + dr, x + dc)
        if not right_in:
            vertices.append((x, y))
            heading = (heading + 1) % 4  # turn right
        elif left_in:
            vertices.append((x, y))
            heading = (heading - 1) % 4  # turn left
        dx, dy = _HEADINGS[heading]
        x, y = x + dx, y + dy
        if anchor is None:
            anchor = (x, y, heading)
        elif (x, y, heading) == anchor:
            break
    else:
        raise ValidationError("boundary trace did not close (region not 4-connected?)")
    return np.array(vertices, dtype=np.float64)


def _connected_component_count(region: np.ndarray) -> int:
    from scipy import ndimage

    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    _, count = ndimage.label(region, structure=structure)
    return count


def _load_cells_raster(path: Path) -> CellSet:
    raster = read_pgm(path)
    height, width = raster.shape
    ids = np.unique(raster)
    ids = ids[ids > 0]
    if len(ids) == 0:
        raise ValidationError(f"{path}: label raster contains no cells")
    cells = []
    for cid in ids:
        region = raster == cid
        if _connected_component_count(region) != 1:
            raise ValidationError(
                f"cell {int(cid)}: pixels form multiple 4-connected components"
            )
        poly = trace_region_boundary(region)
        npix = int(region.sum())
        if abs(polygon_area(poly)) != npix:  # holes break the area == count identity
            raise ValidationError(f"cell {int(cid)}: pixel region is not simply connected")
        cells.append(Cell(id=int(cid), polygon=poly))
    return CellSet(cells=cells, image_extent=(width, height))


def load_roi_mask(path: str | Path) -> RoiMask:
    """Load and validate an 8-bit PGM ROI mask."""
    raster = read_pgm(Path(path))
    if raster.dtype != np.uint8:
        raise ParseError(f"{path}: ROI mask must be 8-bit PGM")
    return RoiMask(codes=raster)


def save_roi_mask(mask: RoiMask, path: str | Path) -> None:
    write_pgm(path, mask.codes, maxval=255)
