"""End-to-end orchestration: cells + boundary mask in, partition + reports out.

The full run writes seven artifacts into the output directory:

    features.csv   per-cell feature matrix (z-scored)
    laplace.pgm    harmonic depth field over the tissue mask
    embeddings.csv trained per-cell embedding vectors
    loss_trace.csv per-epoch training losses
    partition.csv  community label per cell
    scan.json      resolution scan record (gamma, K, Q per step)
    overlay.svg    cell polygons colored by community

Each stage logs to the ``laminae`` logger; failures are re-raised with a
stage-named diagnostic line already emitted, so the CLI only has to map the
exception onto an exit code.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cellgraph import knn_graph, threshold_graph
from .community import (
    Partition,
    resolution_scan,
    save_partition,
    save_scan_report,
    umap_connectivity,
)
from .config import PipelineConfig
from .embed import EmbeddingSet, save_embeddings, save_loss_trace, train
from .errors import ValidationError
from .features import (
    FeatureMatrix,
    assemble_feature_matrix,
    neighbor_distance_stats,
    save_features,
    shape_modes,
)
from .ingest import CellSet, RoiMask, load_cells, load_roi_mask
from .laplace import LaplaceField, cell_laplace_coordinate, save_field, solve_laplace
from .metrics import MetricsReport, evaluate_labels, load_labels

log = logging.getLogger("laminae")

ARTIFACT_NAMES = (
    "features.csv",
    "laplace.pgm",
    "embeddings.csv",
    "loss_trace.csv",
    "partition.csv",
    "scan.json",
    "overlay.svg",
)

# fixed 10-color wheel, indexed by community id modulo 10
PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc949", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)


@contextmanager
def stage(name: str):
    """Log entry/exit around one pipeline stage; failures get a named line."""
    log.info("[%s] started", name)
    start = time.perf_counter()
    try:
        yield
    except Exception as exc:
        log.error("[%s] failed: %s", name, exc)
        raise
    log.info("[%s] finished in %.1fs", name, time.perf_counter() - start)


@dataclass
class PipelineResult:
    cells: CellSet
    ell: np.ndarray
    features: FeatureMatrix
    embeddings: EmbeddingSet
    partition: Partition
    paths: dict[str, Path]


def compute_depth(cells: CellSet, mask: RoiMask, config: PipelineConfig) -> tuple[LaplaceField, np.ndarray]:
    """Solve the boundary-value problem on the mask and read per-cell depths."""
    field = solve_laplace(mask, tol=config.laplace.tol, max_iters=config.laplace.max_iters)
    return field, cell_laplace_coordinate(field, cells).ell


def compute_features(cells: CellSet, config: PipelineConfig, ell: np.ndarray | None) -> FeatureMatrix:
    """Assemble the feature matrix in cell order (not id order)."""
    if config.features.include_laplace and ell is None:
        raise ValueError("depth coordinates are required when include_laplace is on")
    graphs = [threshold_graph(cells, r) for r in config.features.thresholds]
    modes = shape_modes(cells, config.features.shape_seed)
    nn = neighbor_distance_stats(cells, config.features.nn_stats_k)
    return assemble_feature_matrix(
        cells, modes, graphs, nn,
        laplace=ell if config.features.include_laplace else None)


def cluster_embeddings(matrix: np.ndarray, config: PipelineConfig) -> Partition:
    """UMAP-style connectivity graph + resolution-scanned community search."""
    graph = umap_connectivity(matrix, n_neighbors=config.cluster.n_neighbors)
    return resolution_scan(
        graph,
        config.cluster.target_k,
        gamma_range=(config.cluster.gamma_min, config.cluster.gamma_max),
        steps=config.cluster.gamma_steps,
        rng=np.random.default_rng(config.cluster.seed),
        restarts=config.cluster.restarts,
    )


def write_overlay(cells: CellSet, labels, path: str | Path) -> None:
    """SVG of all cell polygons filled by community color."""
    labels = np.asarray(labels)
    if len(labels) != cells.n:
        raise ValueError("label count does not match cell count")
    w, h = cells.image_extent
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'  <rect width="{w}" height="{h}" fill="#ffffff"/>',
    ]
    for cell, lab in zip(cells.cells, labels):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in cell.polygon)
        color = PALETTE[int(lab) % len(PALETTE)]
        parts.append(f'  <polygon points="{pts}" fill="{color}" stroke="#222222" '
                     f'stroke-width="0.2"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def run_pipeline(cells_path: str | Path, mask_path: str | Path, out_dir: str | Path,
                 config: PipelineConfig | None = None) -> PipelineResult:
    """Run every stage and write all artifacts; returns the in-memory results."""
    config = config if config is not None else PipelineConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with stage("ingest"):
        cells = load_cells(cells_path)
        mask = load_roi_mask(mask_path)
        log.info("[ingest] %d cells, extent %dx%d", cells.n, *cells.image_extent)

    with stage("laplace"):
        field, ell = compute_depth(cells, mask, config)
        save_field(field, out / "laplace.pgm")

    with stage("features"):
        features = compute_features(cells, config, ell)
        save_features(features, cells, out / "features.csv")

    cell_ids = [c.id for c in cells.cells]
    with stage("embed"):
        graph = knn_graph(cells, config.knn_k)
        embeddings = train(features.values, graph, ell, config.contrastive)
        save_embeddings(embeddings, cell_ids, out / "embeddings.csv")
        save_loss_trace(embeddings, out / "loss_trace.csv")

    with stage("community"):
        partition = cluster_embeddings(embeddings.matrix, config)
        save_partition(partition, cell_ids, out / "partition.csv")
        save_scan_report(partition, out / "scan.json")
        log.info("[community] K=%d at gamma=%.4g (exact=%s)",
                 partition.k, partition.resolution, partition.exact)

    with stage("overlay"):
        write_overlay(cells, partition.labels, out / "overlay.svg")

    paths = {name: out / name for name in ARTIFACT_NAMES}
    return PipelineResult(cells=cells, ell=ell, features=features,
                          embeddings=embeddings, partition=partition, paths=paths)


def evaluate_files(partition_path: str | Path, truth_path: str | Path) -> MetricsReport:
    """Score a partition CSV against a truth CSV over the same cell id set."""
    ids_pred, pred = load_labels(partition_path)
    ids_true, true = load_labels(truth_path)
    only_pred = np.setdiff1d(ids_pred, ids_true)
    only_true = np.setdiff1d(ids_true, ids_pred)
    if only_pred.size or only_true.size:
        first = int(min([arr[0] for arr in (only_pred, only_true) if arr.size]))
        raise ValidationError(
            f"cell id sets differ between {partition_path} and {truth_path}; "
            f"first missing id: {first}")
    return evaluate_labels(pred[np.argsort(ids_pred)], true[np.argsort(ids_true)])
