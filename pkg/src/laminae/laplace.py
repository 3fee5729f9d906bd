"""Laplace field over the cortical mask and per-cell Laplace coordinates.

The potential solves the 5-point discrete Laplace equation with P=1 on
superior-boundary pixels, P=0 on inferior-boundary pixels, and a zero-flux
(mirror) condition where the interior touches OUTSIDE. Red-black Gauss-Seidel
with over-relaxation; the initial guess is a linear ramp in row index between
the mean superior and inferior rows, which already solves the common
full-rectangle case exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ConvergenceError, ValidationError
from .ingest import INFERIOR, INTERIOR, OUTSIDE, SUPERIOR, CellSet, RoiMask
from .pgmio import write_pgm

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class LaplaceField:
    """Solved potential raster; values meaningful on non-OUTSIDE pixels only."""

    potential: np.ndarray  # (H, W) float64
    codes: np.ndarray  # the mask this field was solved on
    residual: float
    iterations: int

    @property
    def width(self) -> int:
        return self.potential.shape[1]

    @property
    def height(self) -> int:
        return self.potential.shape[0]


@dataclass(frozen=True)
class LaplaceCoordinates:
    """Per-cell mean potential, in cell order; every value in [0, 1]."""

    ell: np.ndarray  # (n,) float64


def _check_reachability(codes: np.ndarray) -> None:
    non_outside = codes != OUTSIDE
    labels, count = ndimage.label(non_outside, structure=_FOUR_CONNECTED)
    boundary = (codes == SUPERIOR) | (codes == INFERIOR)
    interior = codes == INTERIOR
    for comp in range(1, count + 1):
        member = labels == comp
        if np.any(member & interior) and not np.any(member & boundary):
            raise ValidationError(
                "interior region not reachable from any superior/inferior boundary"
            )


def _initial_guess(codes: np.ndarray) -> np.ndarray:
    height, width = codes.shape
    sup_rows = np.nonzero(codes == SUPERIOR)[0]
    inf_rows = np.nonzero(codes == INFERIOR)[0]
    r_sup = float(sup_rows.mean())
    r_inf = float(inf_rows.mean())
    rows = np.arange(height, dtype=np.float64)
    if r_sup == r_inf:
        ramp = np.full(height, 0.5)
    else:
        ramp = np.clip((rows - r_inf) / (r_sup - r_inf), 0.0, 1.0)
    potential = np.repeat(ramp[:, None], width, axis=1)
    potential[codes == SUPERIOR] = 1.0
    potential[codes == INFERIOR] = 0.0
    potential[codes == OUTSIDE] = 0.0
    return potential


def solve_laplace(mask: RoiMask, tol: float = 1e-6, max_iters: int = 50_000) -> LaplaceField:
    """Relax the interior until the max-norm update drops below tol."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be at least 1, got {max_iters}")
    codes = mask.codes
    _check_reachability(codes)
    height, width = codes.shape
    potential = _initial_guess(codes)

    rows, cols = np.nonzero(codes == INTERIOR)
    if len(rows) == 0:
        return LaplaceField(potential=potential, codes=codes, residual=0.0, iterations=0)

    flat = rows * width + cols
    non_outside = codes != OUTSIDE
    # per-pixel neighbor gather tables; a missing neighbor points back at the
    # pixel itself with weight 0, which realizes the mirror condition as an
    # average over the available neighbors
    nbr_idx = np.empty((len(flat), 4), dtype=np.int64)
    nbr_w = np.zeros((len(flat), 4), dtype=np.float64)
    for a, (dr, dc) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        rr, cc = rows + dr, cols + dc
        ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
        ok[ok] &= non_outside[rr[ok], cc[ok]]
        nbr_idx[:, a] = np.where(ok, rr.clip(0, height - 1) * width + cc.clip(0, width - 1), flat)
        nbr_w[:, a] = ok.astype(np.float64)
    counts = nbr_w.sum(axis=1)
    # isolated interior pixels were rejected by RoiMask validation
    color = (rows + cols) % 2
    groups = [
        (flat[color == 0], nbr_idx[color == 0], nbr_w[color == 0], counts[color == 0]),
        (flat[color == 1], nbr_idx[color == 1], nbr_w[color == 1], counts[color == 1]),
    ]

    omega = 1.9
    buf = potential.ravel()
    residual = np.inf
    for iteration in range(1, max_iters + 1):
        residual = 0.0
        for own, idx, w, cnt in groups:
            if len(own) == 0:
                continue
            neighbor_mean = (buf[idx] * w).sum(axis=1) / cnt
            new = (1.0 - omega) * buf[own] + omega * neighbor_mean
            residual = max(residual, float(np.max(np.abs(new - buf[own]))))
            buf[own] = new
        if residual < tol:
            return LaplaceField(
                potential=potential, codes=codes, residual=residual, iterations=iteration
            )
    raise ConvergenceError(
        f"Laplace solver did not reach tol={tol} within {max_iters} iterations",
        residual=residual,
    )


def _points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Crossing-number test, vectorized over points, looped over edges."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    x0, y0 = polygon[:, 0], polygon[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for a in range(len(polygon)):
        if y0[a] == y1[a]:
            continue
        crosses = (y0[a] <= y) != (y1[a] <= y)
        if not np.any(crosses):
            continue
        t = (y[crosses] - y0[a]) / (y1[a] - y0[a])
        x_int = x0[a] + t * (x1[a] - x0[a])
        hits = np.zeros(len(points), dtype=bool)
        hits[crosses] = x[crosses] < x_int
        inside ^= hits
    return inside


def cell_laplace_coordinate(field: LaplaceField, cells: CellSet) -> LaplaceCoordinates:
    """Average the potential over the interior pixel centers each cell covers."""
    codes = field.codes
    height, width = codes.shape
    interior_rc = np.argwhere(codes == INTERIOR)
    if len(interior_rc) == 0:
        raise ValidationError("mask has no interior pixels to average over")
    interior_centers = np.stack([interior_rc[:, 1] + 0.5, interior_rc[:, 0] + 0.5], axis=1)
    tree = cKDTree(interior_centers)
    interior_values = field.potential[interior_rc[:, 0], interior_rc[:, 1]]

    ell = np.empty(cells.n, dtype=np.float64)
    for pos, cell in enumerate(cells.cells):
        poly = cell.polygon
        c0 = max(0, int(np.floor(poly[:, 0].min() - 0.5)))
        c1 = min(width - 1, int(np.ceil(poly[:, 0].max())))
        r0 = max(0, int(np.floor(poly[:, 1].min() - 0.5)))
        r1 = min(height - 1, int(np.ceil(poly[:, 1].max())))
        covered = np.zeros(0, dtype=np.int64)
        if c1 >= c0 and r1 >= r0:
            rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
            rr, cc = rr.ravel(), cc.ravel()
            centers = np.stack([cc + 0.5, rr + 0.5], axis=1)
            hit = _points_in_polygon(centers, poly)
            rr, cc = rr[hit], cc[hit]
            covered = codes[rr, cc]
            inside_interior = covered == INTERIOR
            if np.any(inside_interior):
                ell[pos] = float(field.potential[rr[inside_interior], cc[inside_interior]].mean())
                continue
        on_mask = len(covered) > 0 and np.any(covered != OUTSIDE)
        if not on_mask:
            cr, cc_ = int(np.floor(cell.centroid[1])), int(np.floor(cell.centroid[0]))
            on_mask = (
                0 <= cr < height and 0 <= cc_ < width and codes[cr, cc_] != OUTSIDE
            )
        if not on_mask:
            warnings.warn(
                f"cell {cell.id} lies entirely outside the mask; "
                "using nearest interior pixel",
                stacklevel=2,
            )
        _, nearest = tree.query(np.asarray(cell.centroid))
        ell[pos] = float(interior_values[nearest])
    return LaplaceCoordinates(ell=ell)


def save_field(field: LaplaceField, path: str | Path) -> None:
    """Dump the potential as 16-bit PGM (round(65535*P); OUTSIDE written as 0)."""
    scaled = np.round(65535.0 * np.clip(field.potential, 0.0, 1.0)).astype(np.uint16)
    scaled[field.codes == OUTSIDE] = 0
    write_pgm(path, scaled, maxval=65535)
