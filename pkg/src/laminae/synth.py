"""Synthetic layered-tissue instances with ground-truth band labels.

Bands are horizontal strips stacked bottom-to-top (band 0 deepest).  Cell
centers come from Poisson-disc-thinned uniform sampling at each band's
density; every cell is a 32-vertex ellipse polygon clipped to the image
extent.  The generator is a pure function of its config, so outputs are
byte-identical per seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError, ValidationError
from .ingest import INFERIOR, INTERIOR, SUPERIOR, Cell, CellSet, RoiMask, save_cells, save_roi_mask

ELLIPSE_VERTICES = 32
_MIN_RADIUS = 0.3


@dataclass(frozen=True)
class BandSpec:
    """One horizontal band: how thick, how crowded, and what the cells look
    like.  ``shape_mode_bias`` is the fraction of cells drawn from a strongly
    elongated shape family instead of the band's baseline eccentricity."""

    relative_thickness: float
    cell_density: float  # cells per px^2
    radius_mean: float
    radius_std: float
    eccentricity_mean: float
    shape_mode_bias: float

    def __post_init__(self):
        if self.relative_thickness <= 0:
            raise ValidationError("band thickness must be positive")
        if self.cell_density <= 0:
            raise ValidationError("band density must be positive")
        if self.radius_mean <= 0 or self.radius_std < 0:
            raise ValidationError("radius parameters out of range")
        if not 0.0 <= self.eccentricity_mean < 1.0:
            raise ValidationError("eccentricity_mean must be in [0, 1)")
        if not 0.0 <= self.shape_mode_bias <= 1.0:
            raise ValidationError("shape_mode_bias must be in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    extent: tuple[int, int]  # (W, H) px
    bands: tuple[BandSpec, ...]
    min_separation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "extent", (int(self.extent[0]), int(self.extent[1])))
        object.__setattr__(self, "bands", tuple(self.bands))
        w, h = self.extent
        if w < 1 or h < 3:
            raise ValidationError("extent must be at least 1 x 3 px")
        if not self.bands:
            raise ValidationError("need at least one band")
        total = sum(b.relative_thickness for b in self.bands)
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"band thicknesses sum to {total}, expected 1")
        if self.min_separation < 0:
            raise ValidationError("min_separation must be >= 0")


def band_spans(cfg: SynthConfig) -> list[tuple[float, float]]:
    """Per-band (y_lo, y_hi) intervals, bottom-to-top; band 0 touches y = H."""
    _, h = cfg.extent
    spans = []
    cum = 0.0
    for i, band in enumerate(cfg.bands):
        hi = h * (1.0 - cum)
        cum += band.relative_thickness
        lo = 0.0 if i == len(cfg.bands) - 1 else h * (1.0 - cum)
        spans.append((lo, hi))
    return spans


def band_index(cfg: SynthConfig, y: float) -> int:
    """Band containing depth ``y``; inverse of the generator's placement."""
    for i, (lo, hi) in enumerate(band_spans(cfg)):
        if lo <= y < hi:
            return i
    if abs(y - cfg.extent[1]) <= 1e-9:  # bottom edge belongs to band 0
        return 0
    raise ValueError(f"y={y} outside the extent")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def _ellipse_polygon(cx, cy, radius, ecc, angle):
    """Area-preserving ellipse: semi-axes r/q and r*q with q = (1-e^2)^(1/4)."""
    t = np.arange(ELLIPSE_VERTICES) * (2.0 * np.pi / ELLIPSE_VERTICES)
    q = (1.0 - ecc * ecc) ** 0.25
    xs = (radius / q) * np.cos(t)
    ys = (radius * q) * np.sin(t)
    ca, sa = np.cos(angle), np.sin(angle)
    return np.column_stack([cx + ca * xs - sa * ys, cy + sa * xs + ca * ys])


def _clip_to_rect(poly, w, h):
    """Sutherland-Hodgman clip of a convex polygon to [0,w] x [0,h]."""

    def clip_edge(pts, inside, cross):
        out = []
        for i in range(len(pts)):
            cur, prev = pts[i], pts[i - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(cross(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cross(prev, cur))
        return out

    def x_cross(value):
        def cross(p, q):
            t = (value - p[0]) / (q[0] - p[0])
            return (value, p[1] + t * (q[1] - p[1]))
        return cross

    def y_cross(value):
        def cross(p, q):
            t = (value - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), value)
        return cross

    pts = [tuple(p) for p in poly]
    pts = clip_edge(pts, lambda p: p[0] >= 0.0, x_cross(0.0))
    if pts:
        pts = clip_edge(pts, lambda p: p[0] <= w, x_cross(float(w)))
    if pts:
        pts = clip_edge(pts, lambda p: p[1] >= 0.0, y_cross(0.0))
    if pts:
        pts = clip_edge(pts, lambda p: p[1] <= h, y_cross(float(h)))
    if not pts:
        return None

    # drop duplicate and collinear-middle vertices introduced by clipping
    cleaned = []
    for p in pts:
        if not cleaned or abs(p[0] - cleaned[-1][0]) + abs(p[1] - cleaned[-1][1]) > 1e-9:
            cleaned.append(p)
    while len(cleaned) > 1 and abs(cleaned[0][0] - cleaned[-1][0]) + abs(cleaned[0][1] - cleaned[-1][1]) <= 1e-9:
        cleaned.pop()
    changed = True
    while changed and len(cleaned) > 3:
        changed = False
        for i in range(len(cleaned)):
            a = cleaned[i - 1]
            b = cleaned[i]
            c = cleaned[(i + 1) % len(cleaned)]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if abs(cross) < 1e-12:
                cleaned.pop(i)
                changed = True
                break
    if len(cleaned) < 3:
        return None
    return np.asarray(cleaned, dtype=np.float64)


# ---------------------------------------------------------------------------
# Poisson-disc thinning
# ---------------------------------------------------------------------------

class _SeparationGrid:
    """Uniform hash grid answering 'is any accepted point within s of (x, y)'."""

    def __init__(self, min_separation: float):
        self.s = float(min_separation)
        self.s2 = self.s * self.s
        self.cells: dict[tuple[int, int], list[tuple[float, float]]] = {}

    def admits(self, x, y) -> bool:
        if self.s <= 0.0:
            return True
        gx, gy = int(x // self.s), int(y // self.s)
        for nx in (gx - 1, gx, gx + 1):
            for ny in (gy - 1, gy, gy + 1):
                for px, py in self.cells.get((nx, ny), ()):
                    if (px - x) ** 2 + (py - y) ** 2 < self.s2:
                        return False
        return True

    def add(self, x, y) -> None:
        if self.s <= 0.0:
            return
        self.cells.setdefault((int(x // self.s), int(y // self.s)), []).append((x, y))


def _sample_band_centers(rng, n_target, w, y_lo, y_hi, grid):
    centers = []
    if n_target == 0:
        return centers
    budget = 100 * n_target
    for _ in range(budget):
        x = rng.uniform(0.0, w)
        y = rng.uniform(y_lo, y_hi)
        if grid.admits(x, y):
            grid.add(x, y)
            centers.append((x, y))
            if len(centers) == n_target:
                return centers
    raise GenerationError(
        f"could not place {n_target} cells at separation >= {grid.s} px in band "
        f"y in [{y_lo:.1f}, {y_hi:.1f}) after {budget} attempts")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate(cfg: SynthConfig) -> tuple[CellSet, RoiMask, np.ndarray]:
    """Draw one synthetic instance: cells, boundary mask, and band labels."""
    w, h = cfg.extent
    rng = np.random.default_rng(cfg.seed)
    band_rngs = rng.spawn(len(cfg.bands))
    grid = _SeparationGrid(cfg.min_separation)

    cells: list[Cell] = []
    truth: list[int] = []
    for i, (band, brng, (y_lo, y_hi)) in enumerate(zip(cfg.bands, band_rngs, band_spans(cfg))):
        area = w * (y_hi - y_lo)
        n_target = int(brng.poisson(band.cell_density * area))
        centers = _sample_band_centers(brng, n_target, w, y_lo, y_hi, grid)
        for cx, cy in centers:
            radius = max(_MIN_RADIUS, float(brng.normal(band.radius_mean, band.radius_std)))
            if brng.uniform() < band.shape_mode_bias:
                ecc = float(np.clip(brng.normal(0.85, 0.03), 0.5, 0.95))
            else:
                ecc = float(np.clip(brng.normal(band.eccentricity_mean, 0.05), 0.0, 0.95))
            angle = float(brng.uniform(0.0, np.pi))
            poly = _clip_to_rect(_ellipse_polygon(cx, cy, radius, ecc, angle), w, h)
            if poly is None:  # cannot happen for centers inside the extent
                raise GenerationError(f"cell at ({cx:.1f}, {cy:.1f}) clipped away entirely")
            cells.append(Cell(id=len(cells), polygon=poly))
            truth.append(i)

    codes = np.full((h, w), INTERIOR, dtype=np.uint8)
    codes[0, :] = SUPERIOR
    codes[h - 1, :] = INFERIOR
    return CellSet(cells=cells, image_extent=(w, h)), RoiMask(codes=codes), np.asarray(truth, dtype=np.int64)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def synthetic_cortex_5(seed: int = 0, extent: tuple[int, int] = (720, 540),
                       min_separation: float = 4.0) -> SynthConfig:
    """Five-band preset echoing coarse cortical lamination: a sparse band of
    round cells on top, a dense small-celled band beneath it, and larger,
    more elongated cells toward the bottom.  Bands are listed bottom-to-top."""
    bands = (
        BandSpec(relative_thickness=0.32, cell_density=0.006, radius_mean=3.4,
                 radius_std=0.5, eccentricity_mean=0.45, shape_mode_bias=0.35),
        BandSpec(relative_thickness=0.18, cell_density=0.011, radius_mean=2.2,
                 radius_std=0.3, eccentricity_mean=0.35, shape_mode_bias=0.15),
        BandSpec(relative_thickness=0.24, cell_density=0.008, radius_mean=2.8,
                 radius_std=0.4, eccentricity_mean=0.30, shape_mode_bias=0.20),
        BandSpec(relative_thickness=0.14, cell_density=0.013, radius_mean=2.0,
                 radius_std=0.25, eccentricity_mean=0.25, shape_mode_bias=0.10),
        BandSpec(relative_thickness=0.12, cell_density=0.004, radius_mean=2.6,
                 radius_std=0.4, eccentricity_mean=0.12, shape_mode_bias=0.05),
    )
    return SynthConfig(extent=extent, bands=bands, min_separation=min_separation, seed=seed)


PRESETS = {"synthetic-cortex-5": synthetic_cortex_5}


def make_preset(name: str, seed: int = 0) -> SynthConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name](seed=seed)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def save_truth(truth, cell_ids, path: str | Path) -> None:
    """CSV 'cell_id,band' sorted by cell id."""
    ids = np.asarray(cell_ids, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if ids.size != truth.size:
        raise ValueError("cell id count != truth length")
    order = np.argsort(ids)
    lines = ["cell_id,band"]
    for r in order:
        lines.append(f"{ids[r]},{truth[r]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_truth(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a truth CSV back as (cell_ids, band_labels)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "cell_id,band":
        raise ValueError(f"{path}: expected 'cell_id,band' header")
    ids, bands = [], []
    for line in lines[1:]:
        a, b = line.split(",")
        ids.append(int(a))
        bands.append(int(b))
    return np.asarray(ids, dtype=np.int64), np.asarray(bands, dtype=np.int64)


def save_instance(cells: CellSet, mask: RoiMask, truth, directory: str | Path) -> dict[str, Path]:
    """Write cells.json + mask.pgm + truth.csv into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "cells": directory / "cells.json",
        "mask": directory / "mask.pgm",
        "truth": directory / "truth.csv",
    }
    save_cells(cells, paths["cells"])
    save_roi_mask(mask, paths["mask"])
    save_truth(truth, [c.id for c in cells.cells], paths["truth"])
    return paths
