"""The 29-column per-cell feature matrix.

Layout (fixed, column-named): 7 morphology, 1 shape-mode index, 5 graph
statistics for each of the three distance-threshold graphs, 5 nearest-neighbor
distance statistics, and 1 Laplace coordinate. Columns are z-scored per image;
constant columns map to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh
from scipy.spatial import ConvexHull

from ._centrality import brandes_betweenness_closeness, triangle_counts
from ._kmeans import kmeans
from .cellgraph import CellGraph
from .errors import ParseError, ValidationError
from .ingest import Cell, CellSet, polygon_area

MORPHOLOGY_COLUMNS = (
    "area",
    "minor_axis_length",
    "major_axis_length",
    "perimeter",
    "solidity",
    "eccentricity",
    "roundness",
)
TOPO_COLUMNS = ("degree", "degree_centrality", "betweenness", "closeness", "clustering")
NN_COLUMNS = ("nn_mean", "nn_std", "nn_min", "nn_max", "nn_median")

RESAMPLE_POINTS = 64
PCA_COMPONENTS = 10
SHAPE_MODE_COUNT = 4


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (n, d) float64
    column_names: tuple[str, ...]
    standardized: bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.column_names):
            raise ValidationError("feature matrix shape does not match column names")
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature matrix contains NaN/Inf")
        if self.standardized and len(values) > 1:
            mean = values.mean(axis=0)
            std = values.std(axis=0)
            if np.max(np.abs(mean)) > 1e-9:
                raise ValidationError("standardized columns must have zero mean")
            nonconst = std > 1e-9
            if np.any(np.abs(std[nonconst] - 1.0) > 1e-9):
                raise ValidationError("standardized non-constant columns must have unit std")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", tuple(self.column_names))


@dataclass(frozen=True)
class ShapeModes:
    """Cluster index in {0..3} per cell; 0 is the most populous mode."""

    mode_per_cell: np.ndarray  # (n,) int64

    def __post_init__(self):
        modes = np.asarray(self.mode_per_cell, dtype=np.int64)
        if modes.min(initial=0) < 0 or modes.max(initial=0) >= SHAPE_MODE_COUNT:
            raise ValidationError("shape modes must lie in {0..3}")
        object.__setattr__(self, "mode_per_cell", modes)


# --- morphology -------------------------------------------------------------


def _second_central_moments(polygon: np.ndarray) -> tuple[float, float, float]:
    """Per-unit-area central moments (var_x, var_y, cov_xy) of the polygon."""
    x, y = polygon[:, 0], polygon[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    # raw second moments (about the origin) of the polygon interior
    ixx = float(np.sum(cross * (x * x + x * xn + xn * xn))) / 12.0
    iyy = float(np.sum(cross * (y * y + y * yn + yn * yn))) / 12.0
    ixy = float(np.sum(cross * (x * yn + 2.0 * x * y + 2.0 * xn * yn + xn * y))) / 24.0
    var_x = ixx / area - cx * cx
    var_y = iyy / area - cy * cy
    cov = ixy / area - cx * cy
    return var_x, var_y, cov


def morphological_features(cell: Cell) -> np.ndarray:
    """(area, minor axis, major axis, perimeter, solidity, eccentricity, roundness)."""
    poly = cell.polygon
    area = polygon_area(poly)
    if area <= 0:
        raise ValidationError(f"cell {cell.id}: degenerate polygon")
    var_x, var_y, cov = _second_central_moments(poly)
    eigvals = np.linalg.eigvalsh(np.array([[var_x, cov], [cov, var_y]]))
    lam_minor, lam_major = max(eigvals[0], 0.0), max(eigvals[1], 0.0)
    # axes of the ellipse whose second moments match the polygon's
    major = 4.0 * np.sqrt(lam_major)
    minor = 4.0 * np.sqrt(lam_minor)
    perimeter = float(np.sum(np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)))
    hull_area = float(ConvexHull(poly).volume)
    solidity = area / hull_area
    eccentricity = float(np.sqrt(max(0.0, 1.0 - (minor / major) ** 2))) if major > 0 else 0.0
    roundness = 4.0 * np.pi * area / perimeter**2
    return np.array([area, minor, major, perimeter, solidity, eccentricity, roundness])


# --- shape modes ------------------------------------------------------------


def resample_contour(polygon: np.ndarray, points: int = RESAMPLE_POINTS) -> np.ndarray:
    """Equally spaced arc-length resampling, starting at vertex 0."""
    closed = np.vstack([polygon, polygon[:1]])
    seglen = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seglen)])
    targets = s[-1] * np.arange(points) / points
    return np.stack(
        [np.interp(targets, s, closed[:, 0]), np.interp(targets, s, closed[:, 1])], axis=1
    )


def _normalize_contour(contour: np.ndarray) -> np.ndarray:
    """Zero-centroid, unit-RMS-radius complex representation."""
    z = contour[:, 0] + 1j * contour[:, 1]
    z = z - z.mean()
    rms = np.sqrt(np.mean(np.abs(z) ** 2))
    return z / rms if rms > 0 else z


_SHIFT_INDEX = (np.arange(RESAMPLE_POINTS)[:, None] + np.arange(RESAMPLE_POINTS)[None, :]) % (
    RESAMPLE_POINTS
)


def _align(z: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Best match to ref over cyclic shifts x reflection, rotation closed-form."""
    best_val = -1.0
    best = z
    for candidate in (z, np.conj(z)[::-1]):
        shifted = candidate[_SHIFT_INDEX]  # row s = candidate rolled by s
        corr = shifted.conj() @ ref
        mags = np.abs(corr)
        s = int(np.argmax(mags))
        if mags[s] > best_val:
            best_val = mags[s]
            phase = corr[s] / mags[s] if mags[s] > 0 else 1.0
            best = phase * shifted[s]
    return best


def shape_modes(cells: CellSet, seed: int) -> ShapeModes:
    """Cluster registered cell contours into four canonical modes."""
    n = cells.n
    if n < SHAPE_MODE_COUNT:
        raise ValueError(f"need at least {SHAPE_MODE_COUNT} cells, got {n}")
    rng = np.random.default_rng(seed)
    contours = [_normalize_contour(resample_contour(c.polygon)) for c in cells.cells]

    # pass 1: build a running-mean reference; pass 2: align everything to it
    ref = contours[0]
    for i in range(1, n):
        aligned = _align(contours[i], ref)
        ref = (ref * i + aligned) / (i + 1)
        rms = np.sqrt(np.mean(np.abs(ref) ** 2))
        if rms > 0:
            ref = ref / rms
    aligned = np.stack([_align(z, ref) for z in contours])
    flat = np.concatenate([aligned.real, aligned.imag], axis=1)

    centered = flat - flat.mean(axis=0)
    if np.max(np.abs(centered)) == 0.0:  # identical contours: one mode
        return ShapeModes(mode_per_cell=np.zeros(n, dtype=np.int64))
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    p = min(PCA_COMPONENTS, *centered.shape)
    # project row-wise (rather than taking U*S) so duplicate contours keep
    # bit-identical scores
    scores = centered @ vt[:p].T

    labels = _spectral_cluster(scores, SHAPE_MODE_COUNT, rng)
    return ShapeModes(mode_per_cell=_relabel_by_size(labels, SHAPE_MODE_COUNT))


def _spectral_cluster(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    dist = np.sqrt(d2[~np.eye(n, dtype=bool)])
    # bandwidth from the median informative distance; duplicate pairs would
    # otherwise collapse the scale whenever duplicates are the majority
    informative = dist > 1e-8 * dist.max()
    med = float(np.median(dist[informative])) if np.any(informative) else 1.0
    affinity = np.exp(-d2 / (2.0 * med * med))
    dsqrt = 1.0 / np.sqrt(affinity.sum(axis=1))
    sym = affinity * dsqrt[:, None] * dsqrt[None, :]
    if n <= 512:
        vals, vecs = eigh(sym, subset_by_index=(n - k, n - 1))
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        vals, vecs = eigsh(sym, k=k, which="LA", v0=v0)
    # near-null eigenvectors of the (PSD) normalized affinity are arbitrary
    # rotations of duplicate points; they carry no connectivity information
    # and would split identical shapes, so drop them
    vecs = vecs[:, vals > 1e-8 * vals.max()]
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    rows = vecs / norms
    # empty clusters are legitimate here: degenerate shape populations may
    # genuinely occupy fewer than four modes
    labels, _, _ = kmeans(rows, k, rng, n_init=10, ensure_nonempty=False)
    return labels


def _relabel_by_size(labels: np.ndarray, k: int) -> np.ndarray:
    sizes = np.bincount(labels, minlength=k)
    order = np.lexsort((np.arange(k), -sizes))  # descending size, ties by old label
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return remap[labels]


# --- graph topology ---------------------------------------------------------


def topo_features(graph: CellGraph) -> np.ndarray:
    """(n, 5): degree, degree centrality, betweenness, closeness, clustering."""
    n = graph.n
    indptr, indices = graph.neighbor_lists()
    deg = graph.degrees().astype(np.float64)
    centrality = deg / (n - 1) if n > 1 else np.zeros(n)
    betweenness, closeness = brandes_betweenness_closeness(indptr, indices, n)
    tri = triangle_counts(indptr, indices, n).astype(np.float64)
    pairs = deg * (deg - 1.0)
    clustering = np.where(pairs > 0, 2.0 * tri / np.where(pairs > 0, pairs, 1.0), 0.0)
    return np.stack([deg, centrality, betweenness, closeness, clustering], axis=1)


# --- neighbor distance statistics -------------------------------------------


def neighbor_distance_stats(cells: CellSet, k: int = 10) -> np.ndarray:
    """(n, 5): mean, std, min, max, median of the k nearest centroid distances."""
    pts = cells.centroids()
    n = len(pts)
    if n <= k:
        raise ValueError(f"need more cells ({n}) than neighbors k={k}")
    out = np.empty((n, 5), dtype=np.float64)
    chunk = 512
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.arange(start, stop) - start, np.arange(start, stop)] = np.inf
        nearest = np.sort(d2, axis=1)[:, :k]
        d = np.sqrt(nearest)
        out[start:stop, 0] = d.mean(axis=1)
        out[start:stop, 1] = d.std(axis=1)
        out[start:stop, 2] = d[:, 0]
        out[start:stop, 3] = d[:, -1]
        out[start:stop, 4] = np.median(d, axis=1)
    return out


# --- assembly ---------------------------------------------------------------


def assemble_feature_matrix(
    cells: CellSet,
    modes: ShapeModes,
    graphs: list[CellGraph],
    nn_stats: np.ndarray,
    laplace: np.ndarray | None = None,
    standardize: bool = True,
) -> FeatureMatrix:
    """Stack all feature blocks; z-score per image unless standardize=False."""
    n = cells.n
    blocks = [np.stack([morphological_features(c) for c in cells.cells])]
    names = list(MORPHOLOGY_COLUMNS)

    if len(modes.mode_per_cell) != n:
        raise ValueError("shape modes computed for a different cell count")
    blocks.append(modes.mode_per_cell[:, None].astype(np.float64))
    names.append("shape_mode")

    for graph in graphs:
        if graph.n != n:
            raise ValueError("graph node count does not match cell count")
        blocks.append(topo_features(graph))
        suffix = f"r{graph.param:g}" if graph.kind == "threshold" else f"k{graph.param:g}"
        names.extend(f"{col}_{suffix}" for col in TOPO_COLUMNS)

    nn_stats = np.asarray(nn_stats, dtype=np.float64)
    if nn_stats.shape != (n, 5):
        raise ValueError(f"nn_stats must be (n, 5), got {nn_stats.shape}")
    blocks.append(nn_stats)
    names.extend(NN_COLUMNS)

    if laplace is not None:
        ell = np.asarray(laplace, dtype=np.float64).reshape(-1)
        if len(ell) != n:
            raise ValueError("laplace coordinates computed for a different cell count")
        blocks.append(ell[:, None])
        names.append("laplace_coord")

    values = np.concatenate(blocks, axis=1)
    if standardize:
        values = zscore_columns(values)
    return FeatureMatrix(values=values, column_names=tuple(names), standardized=standardize)


def zscore_columns(values: np.ndarray) -> np.ndarray:
    """Per-column z-score; exactly constant columns become all zeros."""
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    constant = np.ptp(values, axis=0) == 0.0
    out = np.zeros_like(values)
    active = ~constant
    out[:, active] = (values[:, active] - mean[active]) / std[active]
    # refinement pass: cancellation on near-constant columns leaves residual
    # mean/std errors ~1e-8; the scaled values are O(1) so one more round of
    # moment estimation is accurate to machine precision
    out[:, active] -= out[:, active].mean(axis=0)
    out[:, active] /= out[:, active].std(axis=0)
    return out


def save_features(matrix: FeatureMatrix, cells: CellSet, path: str | Path) -> None:
    """CSV export: id column plus named feature columns, rows sorted by cell id."""
    order = np.argsort([c.id for c in cells.cells], kind="stable")
    lines = ["id," + ",".join(matrix.column_names)]
    for row in order:
        vals = ",".join(repr(float(v)) for v in matrix.values[row])
        lines.append(f"{cells.cells[row].id},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_features(path: str | Path) -> tuple[np.ndarray, FeatureMatrix]:
    """Read a save_features CSV back as (cell_ids, FeatureMatrix).

    Values written with repr round-trip exactly, so a reloaded matrix is
    bit-identical to the one that was saved.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("id,"):
        raise ParseError(f"{path}: expected an 'id,<columns>' header")
    names = tuple(lines[0].split(",")[1:])
    ids, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(names) + 1:
            raise ParseError(f"{path}: row has {len(parts)} fields, expected {len(names) + 1}")
        try:
            ids.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}: malformed row {line!r}") from exc
    ids = np.asarray(ids, dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate cell ids")
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
    std = values.std(axis=0) if len(rows) else np.zeros(len(names))
    nonconst = std > 1e-9
    standardized = len(rows) <= 1 or (
        np.max(np.abs(values.mean(axis=0)), initial=0.0) <= 1e-9
        and np.all(np.abs(std[nonconst] - 1.0) <= 1e-9))
    return ids, FeatureMatrix(values=values, column_names=names, standardized=standardized)
