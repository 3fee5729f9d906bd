"""Fuzzy connectivity graphs over embeddings and community detection.

The connectivity graph follows the smooth-kNN construction (per-node kernel
bandwidths calibrated by bisection, fuzzy-union symmetrization).  Partitions
come from a Leiden implementation — fast local moving with a work queue,
randomized refinement under gamma-connectivity constraints, aggregation
constrained by the unrefined partition — maximizing modularity at a given
resolution, plus a resolution scan targeting a community count and a plain
k-means baseline.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kmeans import kmeans
from .errors import ValidationError

_GAIN_TOL = 1e-12


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightedGraph:
    """Undirected weighted graph; weights in (0, 1], no self-loops."""

    n: int
    edge_array: np.ndarray  # (m, 2) int64 with i < j, lexicographically sorted
    weights: np.ndarray  # (m,) float64

    def __post_init__(self):
        edges = np.asarray(self.edge_array, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        object.__setattr__(self, "edge_array", edges)
        object.__setattr__(self, "weights", w)
        if self.n < 1:
            raise ValidationError("graph needs at least one node")
        if w.size != edges.shape[0]:
            raise ValidationError("weight count != edge count")
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValidationError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValidationError("edges must satisfy i < j")
            keys = edges[:, 0] * self.n + edges[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise ValidationError("edges must be sorted and unique")
        if np.any(w <= 0.0):
            raise ValidationError("weights must be positive")
        if np.any(w > 1.0 + 1e-9):
            raise ValidationError("weights must not exceed 1")
        object.__setattr__(self, "weights", np.minimum(w, 1.0))

    @property
    def m(self) -> int:
        return self.edge_array.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def strengths(self) -> np.ndarray:
        s = np.zeros(self.n)
        np.add.at(s, self.edge_array[:, 0], self.weights)
        np.add.at(s, self.edge_array[:, 1], self.weights)
        return s

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric adjacency as (indptr, indices, weights)."""
        e, w = self.edge_array, self.weights
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        vals = np.concatenate([w, w])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, cols, vals


@dataclass(frozen=True)
class Partition:
    """Node-to-community assignment with the quality it was scored at.

    ``quality`` is the modularity at ``resolution`` for Leiden partitions and
    the negative inertia for the k-means baseline (resolution 0).  ``q_trace``
    records modularity per Leiden outer iteration; ``scan`` holds the
    (gamma, K, Q) triples of a resolution scan; ``exact`` says whether a scan
    hit the requested community count.
    """

    labels: np.ndarray
    k: int
    quality: float
    resolution: float
    exact: bool = True
    q_trace: tuple[float, ...] = ()
    scan: tuple[tuple[float, int, float], ...] = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        object.__setattr__(self, "labels", labels)
        if labels.size == 0:
            raise ValidationError("partition covers no nodes")
        if self.k != labels.max() + 1 or np.unique(labels).size != self.k or labels.min() != 0:
            raise ValidationError("community ids must be contiguous 0..K-1")
        if not np.isfinite(self.quality):
            raise ValidationError("quality must be finite")


def _canonical_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel communities contiguously in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = {int(c): i for i, c in enumerate(order)}
    out = np.array([remap[int(c)] for c in labels], dtype=np.int64)
    return out, len(remap)


# ---------------------------------------------------------------------------
# smooth-kNN connectivity
# ---------------------------------------------------------------------------

def umap_connectivity(embeddings, n_neighbors: int = 15) -> WeightedGraph:
    """Fuzzy kNN graph: per-node bandwidths calibrated so the local weight
    mass is log2(n_neighbors), directed kernels symmetrized by fuzzy union."""
    rows = np.asarray(getattr(embeddings, "matrix", embeddings), dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    n = rows.shape[0]
    if n <= n_neighbors:
        raise ValueError(f"need n > n_neighbors, got n={n}, n_neighbors={n_neighbors}")

    sq = np.einsum("ij,ij->i", rows, rows)
    nbr_idx = np.empty((n, n_neighbors), dtype=np.int64)
    nbr_dist = np.empty((n, n_neighbors))
    for start in range(0, n, 512):
        stop = min(start + 512, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * rows[start:stop] @ rows.T
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :n_neighbors]
        nbr_idx[start:stop] = order
        nbr_dist[start:stop] = np.sqrt(np.take_along_axis(d2, order, axis=1))

    rho = nbr_dist[:, 0]
    gaps = np.maximum(0.0, nbr_dist - rho[:, None])
    target = np.log2(n_neighbors)
    lo = np.full(n, 1e-8)
    hi = np.full(n, 1e3)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        mass = np.exp(-gaps / mid[:, None]).sum(axis=1)
        too_big = mass > target
        hi[too_big] = mid[too_big]
        lo[~too_big] = mid[~too_big]
    sigma = 0.5 * (lo + hi)

    directed = np.exp(-gaps / sigma[:, None])
    # fuzzy union: w = a + b - a*b over the two directions
    union: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j, w in zip(nbr_idx[i], directed[i]):
            key = (i, int(j)) if i < j else (int(j), i)
            prev = union.get(key)
            union[key] = w if prev is None else prev + w - prev * w
    items = sorted(union.items())
    edges = np.array([k for k, _ in items], dtype=np.int64).reshape(-1, 2)
    weights = np.array([v for _, v in items])
    keep = weights > 0.0
    return WeightedGraph(n=n, edge_array=edges[keep], weights=weights[keep])


# ---------------------------------------------------------------------------
# modularity
# ---------------------------------------------------------------------------

def modularity(graph: WeightedGraph, partition, gamma: float) -> float:
    """Q = sum_c [w_in/m - gamma (w_tot/(2m))^2]; empty graph scores 0."""
    labels = np.asarray(getattr(partition, "labels", partition), dtype=np.int64)
    if labels.size != graph.n:
        raise ValueError("partition does not cover all nodes")
    m = graph.total_weight
    if m == 0.0:
        return 0.0
    k = int(labels.max()) + 1
    tot = np.bincount(labels, weights=graph.strengths(), minlength=k)
    e = graph.edge_array
    same = labels[e[:, 0]] == labels[e[:, 1]]
    w_in = np.bincount(labels[e[same, 0]], weights=graph.weights[same], minlength=k)
    return float((w_in / m).sum() - gamma * ((tot / (2.0 * m)) ** 2).sum())


# ---------------------------------------------------------------------------
# Leiden
# ---------------------------------------------------------------------------

class _Agg:
    """Mutable aggregate-graph state: symmetric CSR plus per-node self-loop
    weight (internal weight of the collapsed community)."""

    def __init__(self, indptr, indices, weights, self_w):
        self.indptr = indptr
        self.indices = indices
        self.weights = weights
        self.self_w = self_w
        self.n = self_w.size
        strength = np.zeros(self.n)
        for v in range(self.n):
            strength[v] = weights[indptr[v]:indptr[v + 1]].sum() + 2.0 * self_w[v]
        self.k = strength


def _csr_from_pairs(n, pairs: dict[tuple[int, int], float], self_w):
    rows, cols, vals = [], [], []
    for (a, b), w in pairs.items():
        rows += [a, b]
        cols += [b, a]
        vals += [w, w]
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    order = np.lexsort((cols, rows))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    np.cumsum(indptr, out=indptr)
    return _Agg(indptr, cols[order], vals[order], np.asarray(self_w, dtype=np.float64))


def _agg_modularity(state: _Agg, labels, gamma, m):
    k = int(labels.max()) + 1
    tot = np.bincount(labels, weights=state.k, minlength=k)
    w_in = np.bincount(labels, weights=state.self_w, minlength=k)
    for v in range(state.n):
        for idx in range(state.indptr[v], state.indptr[v + 1]):
            u = state.indices[idx]
            if u > v and labels[u] == labels[v]:
                w_in[labels[v]] += state.weights[idx]
    return float((w_in / m).sum() - gamma * ((tot / (2.0 * m)) ** 2).sum())


def _local_move(state: _Agg, labels, gamma, m, rng) -> bool:
    """Queue-based greedy moving; mutates ``labels``; returns whether any
    node moved."""
    n = state.n
    comm_tot = np.bincount(labels, weights=state.k, minlength=n).astype(np.float64)
    comm_size = np.bincount(labels, minlength=n)
    free: list[int] = [c for c in range(n) if comm_size[c] == 0]
    queue = deque(int(v) for v in rng.permutation(n))
    in_queue = np.ones(n, dtype=bool)
    inv_2m2 = gamma / (2.0 * m * m)
    moved_any = False

    while queue:
        v = queue.popleft()
        in_queue[v] = False
        a = int(labels[v])
        kv = state.k[v]
        tot_a = comm_tot[a] - kv
        link: dict[int, float] = {}
        for idx in range(state.indptr[v], state.indptr[v + 1]):
            u = int(state.indices[idx])
            if u == v:
                continue
            c = int(labels[u])
            link[c] = link.get(c, 0.0) + state.weights[idx]
        l_a = link.get(a, 0.0)

        best_c, best_gain = a, _GAIN_TOL
        for c, l_c in link.items():
            if c == a:
                continue
            gain = (l_c - l_a) / m + kv * inv_2m2 * (tot_a - comm_tot[c])
            if gain > best_gain:
                best_c, best_gain = c, gain
        if comm_size[a] > 1:
            gain = -l_a / m + kv * inv_2m2 * tot_a
            if gain > best_gain:
                while free and comm_size[free[-1]] != 0:
                    free.pop()
                if free:
                    best_c, best_gain = free[-1], gain

        if best_c != a:
            moved_any = True
            comm_tot[a] -= kv
            comm_size[a] -= 1
            if comm_size[a] == 0:
                free.append(a)
            comm_tot[best_c] += kv
            comm_size[best_c] += 1
            labels[v] = best_c
            for idx in range(state.indptr[v], state.indptr[v + 1]):
                u = int(state.indices[idx])
                if u != v and labels[u] != best_c and not in_queue[u]:
                    queue.append(u)
                    in_queue[u] = True
    return moved_any


def _refine(state: _Agg, labels, gamma, m, theta, rng):
    """Split each community into gamma-connected sub-communities; singleton
    nodes merge randomly (probability ~ exp(gain/theta)) into candidates that
    keep both sides well-connected to the parent community."""
    n = state.n
    ref = np.arange(n, dtype=np.int64)
    ref_size = np.ones(n, dtype=np.int64)
    ref_tot = state.k.copy()
    ref_ein = np.zeros(n)  # internal (non-self-loop) weight of each sub-community
    ref_ls = np.zeros(n)  # sum over members of their link weight into the parent

    half_inv_m = gamma / (2.0 * m)
    inv_2m2 = gamma / (2.0 * m * m)

    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    for members in np.split(order, bounds):
        if members.size < 2:
            continue
        in_s = set(int(v) for v in members)
        k_s = float(state.k[members].sum())
        link_s = {}
        for v in members:
            v = int(v)
            total = 0.0
            for idx in range(state.indptr[v], state.indptr[v + 1]):
                u = int(state.indices[idx])
                if u != v and u in in_s:
                    total += state.weights[idx]
            link_s[v] = total
            ref_ls[v] = total

        for v in rng.permutation(members):
            v = int(v)
            if ref_size[ref[v]] > 1:
                continue
            kv = state.k[v]
            if link_s[v] + 1e-15 < half_inv_m * kv * (k_s - kv):
                continue  # v itself is not gamma-connected to the community
            cand_link: dict[int, float] = {}
            for idx in range(state.indptr[v], state.indptr[v + 1]):
                u = int(state.indices[idx])
                if u == v or u not in in_s:
                    continue
                r = int(ref[u])
                if r == ref[v]:
                    continue
                cand_link[r] = cand_link.get(r, 0.0) + state.weights[idx]
            targets, gains = [], []
            for r, l_c in cand_link.items():
                cut = ref_ls[r] - 2.0 * ref_ein[r]
                if cut + 1e-15 < half_inv_m * ref_tot[r] * (k_s - ref_tot[r]):
                    continue  # candidate sub-community not gamma-connected
                gain = l_c / m - kv * inv_2m2 * ref_tot[r]
                if gain > -_GAIN_TOL:
                    targets.append(r)
                    gains.append(gain)
            if not targets:
                continue
            gains = np.asarray(gains)
            weights = np.exp((gains - gains.max()) / theta)
            choice = targets[int(rng.choice(len(targets), p=weights / weights.sum()))]
            old = int(ref[v])
            ref[v] = choice
            ref_size[choice] += ref_size[old]
            ref_tot[choice] += ref_tot[old]
            ref_ein[choice] += ref_ein[old] + cand_link[choice]
            ref_ls[choice] += ref_ls[old]
            ref_size[old] = 0
    return ref


def _aggregate(state: _Agg, ref, labels, node_map):
    uniq, ref_c = np.unique(ref, return_inverse=True)
    n2 = uniq.size
    self_w2 = np.bincount(ref_c, weights=state.self_w, minlength=n2)
    pairs: dict[tuple[int, int], float] = {}
    for v in range(state.n):
        for idx in range(state.indptr[v], state.indptr[v + 1]):
            u = int(state.indices[idx])
            if u <= v:
                continue
            a, b = int(ref_c[v]), int(ref_c[u])
            if a == b:
                self_w2[a] += state.weights[idx]
            else:
                key = (a, b) if a < b else (b, a)
                pairs[key] = pairs.get(key, 0.0) + state.weights[idx]
    new_state = _csr_from_pairs(n2, pairs, self_w2)
    # each refined community starts in the community of its unrefined parent
    parent = np.zeros(n2, dtype=np.int64)
    parent[ref_c] = labels
    labels2, _ = _canonical_labels(parent)
    return new_state, labels2, ref_c[node_map]


def _split_disconnected(graph: WeightedGraph, labels):
    """Ensure each community is internally connected by splitting stray
    components; this never lowers modularity (no intra edges are lost)."""
    indptr, indices, _ = graph.csr()
    out = np.full(graph.n, -1, dtype=np.int64)
    next_label = 0
    for v in range(graph.n):
        if out[v] >= 0:
            continue
        stack = [v]
        out[v] = next_label
        while stack:
            x = stack.pop()
            for idx in range(indptr[x], indptr[x + 1]):
                u = int(indices[idx])
                if out[u] < 0 and labels[u] == labels[x]:
                    out[u] = next_label
                    stack.append(u)
        next_label += 1
    return out


def _leiden_once(graph: WeightedGraph, gamma, rng, theta, init_labels=None):
    n = graph.n
    m = graph.total_weight
    if m == 0.0:
        return np.arange(n, dtype=np.int64), (0.0,)

    indptr, indices, weights = graph.csr()
    state = _Agg(indptr, indices, weights, np.zeros(n))
    if init_labels is None:
        labels = np.arange(n, dtype=np.int64)
    else:
        labels, _ = _canonical_labels(np.asarray(init_labels, dtype=np.int64))
    node_map = np.arange(n, dtype=np.int64)
    trace: list[float] = []

    for _ in range(200):
        moved = _local_move(state, labels, gamma, m, rng)
        labels, _ = _canonical_labels(labels)
        trace.append(_agg_modularity(state, labels, gamma, m))
        if not moved:
            break
        ref = _refine(state, labels, gamma, m, theta, rng)
        state, labels, node_map = _aggregate(state, ref, labels, node_map)

    flat = labels[node_map]
    flat = _split_disconnected(graph, flat)
    flat, _ = _canonical_labels(flat)
    trace.append(modularity(graph, flat, gamma))
    return flat, tuple(trace)


def leiden(graph: WeightedGraph, gamma: float, rng: np.random.Generator,
           restarts: int = 1, theta: float = 0.01) -> Partition:
    """Best-of-``restarts`` Leiden maximization of modularity at ``gamma``.

    The first restart begins from the singleton partition; further restarts
    begin from random initial partitions so they explore different basins.
    """
    best_labels, best_trace = None, None
    for attempt in range(max(1, restarts)):
        init = None
        if attempt > 0 and graph.n > 1:
            k0 = int(rng.integers(2, graph.n + 1))
            init = rng.integers(0, k0, size=graph.n)
        flat, trace = _leiden_once(graph, gamma, rng, theta, init_labels=init)
        if best_trace is None or trace[-1] > best_trace[-1]:
            best_labels, best_trace = flat, trace
    return Partition(
        labels=best_labels,
        k=int(best_labels.max()) + 1,
        quality=best_trace[-1],
        resolution=gamma,
        q_trace=best_trace,
    )


# ---------------------------------------------------------------------------
# resolution scan and baseline
# ---------------------------------------------------------------------------

def resolution_scan(graph: WeightedGraph, target_k: int,
                    gamma_range: tuple[float, float] = (0.1, 3.0),
                    steps: int = 30, rng: np.random.Generator | None = None,
                    restarts: int = 3) -> Partition:
    """Scan geometrically spaced resolutions for a partition with ``target_k``
    communities; fall back to the closest count (flagged inexact)."""
    if target_k < 1:
        raise ValueError("target community count must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    gammas = np.geomspace(gamma_range[0], gamma_range[1], steps)
    runs: list[Partition] = [leiden(graph, float(g), rng, restarts=restarts) for g in gammas]
    records = tuple((p.resolution, p.k, p.quality) for p in runs)

    exact = [p for p in runs if p.k == target_k]
    if exact:
        chosen = max(exact, key=lambda p: p.quality)
        flag = True
    else:
        chosen = min(runs, key=lambda p: (abs(p.k - target_k), -p.quality))
        flag = False
    return Partition(labels=chosen.labels, k=chosen.k, quality=chosen.quality,
                     resolution=chosen.resolution, exact=flag,
                     q_trace=chosen.q_trace, scan=records)


def kmeans_baseline(features, k: int, seed: int = 0) -> Partition:
    """Plain k-means over rows (50 restarts); quality is negative inertia."""
    values = getattr(features, "matrix", features)
    values = np.asarray(getattr(values, "values", values), dtype=np.float64)
    n = values.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    labels, _, inertia = kmeans(values, k, np.random.default_rng(seed),
                                n_init=50, ensure_nonempty=True)
    labels, n_labels = _canonical_labels(labels)
    return Partition(labels=labels, k=n_labels, quality=-inertia, resolution=0.0)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def save_partition(partition: Partition, cell_ids, path: str | Path) -> None:
    ids = np.asarray(cell_ids, dtype=np.int64)
    if ids.size != partition.labels.size:
        raise ValueError("cell id count != partition size")
    order = np.argsort(ids)
    lines = ["cell_id,community"]
    for r in order:
        lines.append(f"{ids[r]},{partition.labels[r]}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_scan_report(partition: Partition, path: str | Path) -> None:
    records = [{"gamma": g, "k": k, "q": q} for g, k, q in partition.scan]
    Path(path).write_text(json.dumps(records, indent=2) + "\n")
