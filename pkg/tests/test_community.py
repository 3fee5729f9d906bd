"""Connectivity-graph and community-detection tests.

The Leiden implementation is held to the exhaustive optimum on all small
instances: every set partition of n <= 8 nodes is enumerated and scored with
an independent dense-matrix modularity oracle.
"""

import json

import numpy as np
import pytest

from laminae.community import (
    Partition,
    WeightedGraph,
    kmeans_baseline,
    leiden,
    modularity,
    resolution_scan,
    save_partition,
    save_scan_report,
    umap_connectivity,
)
from laminae.errors import ValidationError


# ---------------------------------------------------------------------------
# oracles and helpers
# ---------------------------------------------------------------------------

def graph_from_pairs(n, pairs):
    pairs = sorted((min(i, j), max(i, j), w) for i, j, w in pairs)
    edges = np.array([(i, j) for i, j, _ in pairs], dtype=np.int64).reshape(-1, 2)
    weights = np.array([w for _, _, w in pairs])
    return WeightedGraph(n=n, edge_array=edges, weights=weights)


def dense_adjacency(graph):
    a = np.zeros((graph.n, graph.n))
    for (i, j), w in zip(graph.edge_array, graph.weights):
        a[i, j] = a[j, i] = w
    return a


def modularity_dense(adj, labels, gamma):
    """Independent route: pairwise null-model form of the same quality."""
    two_m = adj.sum()
    if two_m == 0:
        return 0.0
    k = adj.sum(axis=1)
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    return float(((adj - gamma * np.outer(k, k) / two_m) * same).sum() / two_m)


def all_partitions(n):
    """Every set partition of range(n) as a label array."""
    labels = np.zeros(n, dtype=np.int64)

    def rec(i, k):
        if i == n:
            yield labels.copy()
            return
        for c in range(k):
            labels[i] = c
            yield from rec(i + 1, k)
        labels[i] = k
        yield from rec(i + 1, k + 1)

    yield from rec(0, 0)


def exhaustive_best_q(graph, gamma):
    adj = dense_adjacency(graph)
    return max(modularity_dense(adj, p, gamma) for p in all_partitions(graph.n))


def random_weighted_graph(rng, n, p=0.5):
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < p:
                pairs.append((i, j, float(rng.uniform(0.05, 1.0))))
    if not pairs:  # keep at least one edge so m > 0
        pairs.append((0, 1, 0.5))
    return graph_from_pairs(n, pairs)


def communities_connected(graph, labels):
    indptr, indices, _ = graph.csr()
    labels = np.asarray(labels)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        seen = {int(members[0])}
        stack = [int(members[0])]
        while stack:
            v = stack.pop()
            for idx in range(indptr[v], indptr[v + 1]):
                u = int(indices[idx])
                if labels[u] == c and u not in seen:
                    seen.add(u)
                    stack.append(u)
        if seen != set(int(v) for v in members):
            return False
    return True


def two_triangles():
    return graph_from_pairs(6, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0),
                                (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)])


# ---------------------------------------------------------------------------
# WeightedGraph / Partition types
# ---------------------------------------------------------------------------

def test_graph_validation():
    with pytest.raises(ValidationError):
        graph_from_pairs(3, [(0, 0, 0.5)])  # self-loop
    with pytest.raises(ValidationError):
        graph_from_pairs(3, [(0, 1, 0.0)])  # non-positive weight
    with pytest.raises(ValidationError):
        graph_from_pairs(3, [(0, 1, 1.5)])  # weight above one
    with pytest.raises(ValidationError):
        WeightedGraph(n=3, edge_array=np.array([[0, 1], [0, 1]]),
                      weights=np.array([0.5, 0.5]))  # duplicate edge


def test_graph_strengths_and_total():
    g = two_triangles()
    assert g.total_weight == 6.0
    assert np.allclose(g.strengths(), 2.0)


def test_partition_requires_contiguous_ids():
    with pytest.raises(ValidationError):
        Partition(labels=np.array([0, 2]), k=2, quality=0.0, resolution=1.0)
    with pytest.raises(ValidationError):
        Partition(labels=np.array([1, 2]), k=2, quality=0.0, resolution=1.0)
    p = Partition(labels=np.array([0, 1, 0]), k=2, quality=0.1, resolution=1.0)
    assert p.k == 2


# ---------------------------------------------------------------------------
# smooth-kNN connectivity
# ---------------------------------------------------------------------------

def test_umap_rejects_small_n():
    with pytest.raises(ValueError):
        umap_connectivity(np.zeros((5, 3)), n_neighbors=5)


def test_umap_nearest_neighbor_edge_weight_is_one():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 4))
    g = umap_connectivity(pts, n_neighbors=5)
    lookup = {(int(i), int(j)): w for (i, j), w in zip(g.edge_array, g.weights)}
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    np.fill_diagonal(d, np.inf)
    for i in range(40):
        j = int(np.argmin(d[i]))
        assert lookup[(min(i, j), max(i, j))] == pytest.approx(1.0, abs=1e-12)


def test_umap_identical_rows_weight_one():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(20, 3))
    pts[7] = pts[3]
    g = umap_connectivity(pts, n_neighbors=4)
    lookup = {(int(i), int(j)): w for (i, j), w in zip(g.edge_array, g.weights)}
    assert lookup[(3, 7)] == pytest.approx(1.0, abs=1e-12)


def test_umap_translation_invariance():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(30, 5))
    g1 = umap_connectivity(pts, n_neighbors=6)
    g2 = umap_connectivity(pts + 13.25, n_neighbors=6)
    assert np.array_equal(g1.edge_array, g2.edge_array)
    assert np.allclose(g1.weights, g2.weights, atol=1e-12)


def test_umap_matches_hand_evaluation_five_points():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.5, 0.0], [0.0, 2.0], [4.0, 1.0]])
    k = 2
    n = 5
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    np.fill_diagonal(d, np.inf)
    directed = {}
    for i in range(n):
        nbrs = np.argsort(d[i], kind="stable")[:k]
        rho = d[i, nbrs[0]]
        lo, hi = 1e-8, 1e3
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            mass = np.exp(-(np.maximum(0.0, d[i, nbrs] - rho)) / mid).sum()
            if mass > np.log2(k):
                hi = mid
            else:
                lo = mid
        sigma = 0.5 * (lo + hi)
        for j in nbrs:
            directed[(i, int(j))] = float(np.exp(-max(0.0, d[i, j] - rho) / sigma))
    want = {}
    for (i, j), a in directed.items():
        key = (min(i, j), max(i, j))
        b = directed.get((j, i), 0.0)
        if (i, j) == (key[0], key[1]) or (j, i) not in directed:
            want[key] = a + b - a * b
    got = {(int(i), int(j)): w for (i, j), w in
           zip(*(lambda g: (g.edge_array, g.weights))(umap_connectivity(pts, n_neighbors=k)))}
    assert set(got) == set(want)
    for key in want:
        assert got[key] == pytest.approx(want[key], abs=1e-12)


# ---------------------------------------------------------------------------
# modularity
# ---------------------------------------------------------------------------

def test_modularity_two_triangles():
    g = two_triangles()
    q = modularity(g, np.array([0, 0, 0, 1, 1, 1]), gamma=1.0)
    assert q == pytest.approx(0.5, abs=1e-12)


def test_modularity_single_community_is_zero():
    g = two_triangles()
    assert modularity(g, np.zeros(6, dtype=int), gamma=1.0) == pytest.approx(0.0, abs=1e-15)


def test_modularity_empty_graph_is_zero():
    g = WeightedGraph(n=4, edge_array=np.empty((0, 2), dtype=np.int64),
                      weights=np.empty(0))
    assert modularity(g, np.arange(4), gamma=1.0) == 0.0


def test_modularity_matches_dense_oracle():
    rng = np.random.default_rng(3)
    for _ in range(15):
        g = random_weighted_graph(rng, int(rng.integers(4, 9)))
        labels = rng.integers(0, 3, size=g.n)
        labels = np.unique(labels, return_inverse=True)[1]
        gamma = float(rng.uniform(0.3, 2.5))
        assert modularity(g, labels, gamma) == pytest.approx(
            modularity_dense(dense_adjacency(g), labels, gamma), abs=1e-12)


# ---------------------------------------------------------------------------
# Leiden
# ---------------------------------------------------------------------------

def test_leiden_two_triangles_exact():
    g = two_triangles()
    p = leiden(g, 1.0, np.random.default_rng(0))
    assert p.k == 2
    assert p.labels[0] == p.labels[1] == p.labels[2]
    assert p.labels[3] == p.labels[4] == p.labels[5]
    assert p.quality == pytest.approx(0.5, abs=1e-12)


def test_leiden_single_node():
    g = WeightedGraph(n=1, edge_array=np.empty((0, 2), dtype=np.int64),
                      weights=np.empty(0))
    p = leiden(g, 1.0, np.random.default_rng(0))
    assert p.k == 1 and p.labels.tolist() == [0]


def test_leiden_complete_graph_one_community():
    pairs = [(i, j, 1.0) for i in range(4) for j in range(i + 1, 4)]
    p = leiden(graph_from_pairs(4, pairs), 1.0, np.random.default_rng(1))
    assert p.k == 1


def test_leiden_quality_field_matches_recomputation():
    rng = np.random.default_rng(4)
    g = random_weighted_graph(rng, 12, p=0.4)
    p = leiden(g, 1.3, np.random.default_rng(7), restarts=3)
    assert p.quality == pytest.approx(modularity(g, p.labels, 1.3), abs=1e-12)


def test_leiden_trace_non_decreasing_and_connected():
    rng = np.random.default_rng(5)
    for trial in range(8):
        g = random_weighted_graph(rng, int(rng.integers(6, 25)), p=0.25)
        gamma = float(rng.uniform(0.5, 2.0))
        p = leiden(g, gamma, np.random.default_rng(trial), restarts=2)
        trace = np.asarray(p.q_trace)
        assert np.all(np.diff(trace) >= -1e-12)
        assert communities_connected(g, p.labels)


def test_leiden_matches_exhaustive_optimum_small_graphs():
    rng = np.random.default_rng(6)
    for trial in range(12):
        n = int(rng.integers(4, 9))
        g = random_weighted_graph(rng, n, p=0.55)
        p = leiden(g, 1.0, np.random.default_rng(100 + trial), restarts=12)
        best = exhaustive_best_q(g, 1.0)
        assert p.quality == pytest.approx(best, abs=1e-9)


def test_leiden_determinism():
    rng = np.random.default_rng(8)
    g = random_weighted_graph(rng, 15, p=0.3)
    p1 = leiden(g, 1.0, np.random.default_rng(3), restarts=3)
    p2 = leiden(g, 1.0, np.random.default_rng(3), restarts=3)
    assert np.array_equal(p1.labels, p2.labels)
    assert p1.quality == p2.quality


# ---------------------------------------------------------------------------
# resolution scan
# ---------------------------------------------------------------------------

def block_graph(rng, sizes, p_in=0.9, p_out=0.08, w_in=(0.6, 1.0), w_out=(0.02, 0.1)):
    n = sum(sizes)
    block = np.repeat(np.arange(len(sizes)), sizes)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if block[i] == block[j]:
                if rng.uniform() < p_in:
                    pairs.append((i, j, float(rng.uniform(*w_in))))
            elif rng.uniform() < p_out:
                pairs.append((i, j, float(rng.uniform(*w_out))))
    return graph_from_pairs(n, pairs), block


def test_scan_two_blocks_recovered_exactly():
    rng = np.random.default_rng(9)
    g, block = block_graph(rng, [10, 10])
    p = resolution_scan(g, target_k=2, rng=np.random.default_rng(0))
    assert p.exact and p.k == 2
    # same side of the partition iff same block
    assert len({(int(b), int(c)) for b, c in zip(block, p.labels)}) == 2
    assert len(p.scan) == 30
    gammas = [g_ for g_, _, _ in p.scan]
    assert gammas[0] == pytest.approx(0.1) and gammas[-1] == pytest.approx(3.0)


def test_scan_target_one_merges_everything():
    # enough inter-block weight that merging wins at the low end of the scan:
    # Q(one community) = 1 - gamma beats any split once cross edges are heavy
    rng = np.random.default_rng(10)
    g, _ = block_graph(rng, [8, 8], p_out=0.5, w_out=(0.3, 0.6))
    p = resolution_scan(g, target_k=1, rng=np.random.default_rng(1))
    assert p.exact and p.k == 1


def test_scan_inexact_flag_when_target_unreachable():
    g = two_triangles()
    # 6 nodes cannot form 5 communities at any scanned resolution's optimum:
    # gamma <= 3 on this graph yields 1 or 2 communities
    p = resolution_scan(g, target_k=5, rng=np.random.default_rng(2))
    assert not p.exact
    assert p.k == max(k for _, k, _ in p.scan)


def test_scan_rejects_bad_target():
    with pytest.raises(ValueError):
        resolution_scan(two_triangles(), target_k=0, rng=np.random.default_rng(0))


# ---------------------------------------------------------------------------
# k-means baseline
# ---------------------------------------------------------------------------

def test_kmeans_baseline_recovers_blobs():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(25, 3)) * 0.2
    b = rng.normal(size=(25, 3)) * 0.2 + 10.0
    x = np.vstack([a, b])
    p = kmeans_baseline(x, 2, seed=0)
    assert p.k == 2
    assert len(set(p.labels[:25])) == 1 and len(set(p.labels[25:])) == 1
    assert p.labels[0] != p.labels[25]


def test_kmeans_baseline_k1_inertia_is_total_scatter():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(30, 4))
    p = kmeans_baseline(x, 1, seed=0)
    scatter = float(((x - x.mean(axis=0)) ** 2).sum())
    assert -p.quality == pytest.approx(scatter, rel=1e-12)


def test_kmeans_baseline_k_equals_n_zero_inertia():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(12, 3))
    p = kmeans_baseline(x, 12, seed=0)
    assert p.k == 12
    assert -p.quality == pytest.approx(0.0, abs=1e-12)


def test_kmeans_baseline_k_above_n_raises():
    with pytest.raises(ValueError):
        kmeans_baseline(np.zeros((4, 2)), 5)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def test_save_partition_sorted_by_cell_id(tmp_path):
    p = Partition(labels=np.array([1, 0, 1]), k=2, quality=0.0, resolution=1.0)
    path = tmp_path / "partition.csv"
    save_partition(p, [9, 4, 30], path)
    assert path.read_text() == "cell_id,community\n4,0\n9,1\n30,1\n"


def test_save_scan_report(tmp_path):
    p = Partition(labels=np.array([0, 1]), k=2, quality=0.3, resolution=1.5,
                  scan=((0.1, 1, 0.0), (1.5, 2, 0.3)))
    path = tmp_path / "scan.json"
    save_scan_report(p, path)
    data = json.loads(path.read_text())
    assert data == [{"gamma": 0.1, "k": 1, "q": 0.0},
                    {"gamma": 1.5, "k": 2, "q": 0.3}]
