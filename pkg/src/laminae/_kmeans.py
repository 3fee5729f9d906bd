"""Deterministic Lloyd k-means with k-means++ seeding and restarts.

Used by the shape-mode spectral clustering and by the k-means baseline the
pipeline is compared against. Ties (equal distances, equal inertia) resolve
to the lowest index so results are reproducible bit-for-bit for a given rng.
"""

from __future__ import annotations

import numpy as np

# once the uncovered distance mass falls below this fraction of the initial
# mass, the remaining points are duplicates for all practical purposes and
# further centers repeat the first one instead of splitting float noise
_DUPLICATE_MASS = 1e-12


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    total0 = d2.sum()
    for c in range(1, k):
        total = d2.sum()
        if total <= _DUPLICATE_MASS * total0 or total <= 0.0:
            centers[c:] = centers[0]
            return centers
        probs = d2 / total
        centers[c] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(points, centers, max_iters, ensure_nonempty):
    n, k = len(points), len(centers)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)  # ties -> lowest center index
        if ensure_nonempty:
            # keep every cluster populated: hand the farthest point to an empty one
            for c in range(k):
                if not np.any(new_labels == c):
                    far = int(np.argmax(d2[np.arange(n), new_labels]))
                    new_labels[far] = c
                    d2[far, :] = 0.0
        else:
            # retire empty clusters for good; a stale center left inside a
            # cloud of near-duplicates would otherwise recapture points
            for c in range(k):
                if not np.any(new_labels == c):
                    centers[c] = np.inf
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            member = labels == c
            if np.any(member):
                centers[c] = points[member].mean(axis=0)
    inertia = float(((points - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def kmeans(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    n_init: int = 10,
    max_iters: int = 300,
    ensure_nonempty: bool = True,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Best-of-n_init k-means; returns (labels, centers, inertia)."""
    points = np.asarray(points, dtype=np.float64)
    if k < 1 or k > len(points):
        raise ValueError(f"k={k} out of range for {len(points)} points")
    best = None
    for _ in range(n_init):
        centers = _plus_plus_init(points, k, rng)
        labels, centers, inertia = _lloyd(points, centers.copy(), max_iters, ensure_nonempty)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best
