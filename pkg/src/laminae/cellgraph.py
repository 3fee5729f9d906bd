"""Undirected, unweighted cell-graphs over centroid geometry.

Two constructions: symmetrized kNN (union of directed k-nearest relations,
distance ties broken by lower cell index) and distance-threshold graphs
(edge iff centroid distance strictly below the radius).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .errors import ValidationError
from .ingest import CellSet

_CHUNK = 512  # rows of the pairwise-distance block held at once


@dataclass(frozen=True)
class CellGraph:
    """Immutable edge list; edges stored as (i, j) rows with i < j, sorted."""

    n: int
    edge_array: np.ndarray  # (m, 2) int64
    kind: str  # "knn" | "threshold" | "topk"
    param: float

    def __post_init__(self):
        edges = np.asarray(self.edge_array, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValidationError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValidationError("edges must satisfy i < j (no self-loops)")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            if np.any(np.all(edges[1:] == edges[:-1], axis=1)):
                raise ValidationError("duplicate edge")
        object.__setattr__(self, "edge_array", edges)

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edge_array}

    @property
    def m(self) -> int:
        return len(self.edge_array)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        if self.m:
            np.add.at(deg, self.edge_array[:, 0], 1)
            np.add.at(deg, self.edge_array[:, 1], 1)
        return deg

    def adjacency(self) -> csr_matrix:
        """Symmetric 0/1 CSR adjacency."""
        e = self.edge_array
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        return csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def neighbor_lists(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style (indptr, indices) of sorted neighbor ids."""
        adj = self.adjacency()
        adj.sort_indices()
        return adj.indptr.astype(np.int64), adj.indices.astype(np.int64)


def knn_graph(cells: CellSet, k: int) -> CellGraph:
    """Union-symmetrized k-nearest-neighbor graph on cell centroids."""
    pts = cells.centroids()
    n = len(pts)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of cells ({n})")
    pairs = []
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.arange(start, stop) - start, np.arange(start, stop)] = np.inf
        # stable sort: ascending distance, ties resolved by lower cell index
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        src = np.repeat(np.arange(start, stop), k)
        pairs.append(np.stack([src, nearest.ravel()], axis=1))
    directed = np.concatenate(pairs)
    und = np.sort(directed, axis=1)
    und = np.unique(und, axis=0)
    return CellGraph(n=n, edge_array=und, kind="knn", param=float(k))


def threshold_graph(cells: CellSet, radius: float) -> CellGraph:
    """Graph with an edge wherever centroid distance < radius (strict)."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    pts = cells.centroids()
    n = len(pts)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")  # distance <= radius
    if len(pairs):
        d = np.sqrt(np.sum((pts[pairs[:, 0]] - pts[pairs[:, 1]]) ** 2, axis=1))
        pairs = pairs[d < radius]
        pairs = np.sort(pairs, axis=1)
    else:
        pairs = pairs.reshape(0, 2)
    return CellGraph(n=n, edge_array=pairs.astype(np.int64), kind="threshold", param=float(radius))


def save_edges(graph: CellGraph, path: str | Path) -> None:
    """Debug export: CSV with header "i,j", rows sorted lexicographically."""
    lines = ["i,j"]
    lines.extend(f"{i},{j}" for i, j in graph.edge_array)
    Path(path).write_text("\n".join(lines) + "\n")
