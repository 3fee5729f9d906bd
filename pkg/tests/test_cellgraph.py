import numpy as np
import pytest

from laminae.cellgraph import CellGraph, knn_graph, save_edges, threshold_graph
from laminae.errors import ValidationError

from conftest import cellset_from_points


def brute_knn_edges(points, k):
    """Literal restatement of the contract: directed k-nearest with ties by
    lower index, then union-symmetrized."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    edges = set()
    for i in range(n):
        cand = [(float(np.sum((points[i] - points[j]) ** 2)), j) for j in range(n) if j != i]
        cand.sort()
        for _, j in cand[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def brute_threshold_edges(points, radius):
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    return {
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if np.sqrt(np.sum((points[i] - points[j]) ** 2)) < radius
    }


def test_collinear_tie_break():
    cells = cellset_from_points([[0, 0], [1, 0], [2, 0]])
    g = knn_graph(cells, k=1)
    assert g.edges == {(0, 1), (1, 2)}


def test_two_nodes_single_edge():
    cells = cellset_from_points([[0, 0], [3, 4]])
    g = knn_graph(cells, k=1)
    assert g.edges == {(0, 1)}


def test_k_equals_n_minus_one_gives_complete_graph():
    rng = np.random.default_rng(11)
    cells = cellset_from_points(rng.uniform(0, 50, size=(5, 2)))
    g = knn_graph(cells, k=4)
    assert g.m == 10
    assert g.edges == {(i, j) for i in range(5) for j in range(i + 1, 5)}


def test_k_out_of_range_rejected():
    cells = cellset_from_points([[0, 0], [1, 0], [2, 0]])
    with pytest.raises(ValueError):
        knn_graph(cells, k=3)
    with pytest.raises(ValueError):
        knn_graph(cells, k=0)


def test_knn_matches_brute_force_oracle():
    rng = np.random.default_rng(23)
    for trial in range(15):
        n = int(rng.integers(3, 40))
        k = int(rng.integers(1, n))
        pts = rng.uniform(0, 30, size=(n, 2))
        if trial % 3 == 0:
            pts = np.round(pts)  # force plenty of distance ties
        cells = cellset_from_points(pts)
        got = knn_graph(cells, k=k)
        assert got.edges == brute_knn_edges(cells.centroids(), k)


def test_every_node_has_an_edge():
    rng = np.random.default_rng(5)
    cells = cellset_from_points(rng.uniform(0, 100, size=(30, 2)))
    g = knn_graph(cells, k=1)
    touched = set(g.edge_array.ravel().tolist())
    assert touched == set(range(30))


def test_threshold_strict_inequality():
    cells = cellset_from_points([[0, 0], [49, 0]])
    assert threshold_graph(cells, 50.0).edges == {(0, 1)}
    cells = cellset_from_points([[0, 0], [50, 0]])
    assert threshold_graph(cells, 50.0).edges == set()


def test_threshold_single_node_empty():
    cells = cellset_from_points([[5, 5]])
    g = threshold_graph(cells, 100.0)
    assert g.edges == set()
    assert g.n == 1


def test_threshold_radius_must_be_positive():
    cells = cellset_from_points([[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        threshold_graph(cells, 0.0)
    with pytest.raises(ValueError):
        threshold_graph(cells, -2.0)


def test_threshold_matches_brute_force_oracle():
    rng = np.random.default_rng(31)
    for _ in range(10):
        n = int(rng.integers(2, 50))
        pts = rng.uniform(0, 40, size=(n, 2))
        r = float(rng.uniform(2, 40))
        cells = cellset_from_points(pts)
        got = threshold_graph(cells, r)
        assert got.edges == brute_threshold_edges(cells.centroids(), r)


def test_threshold_monotone_in_radius():
    rng = np.random.default_rng(41)
    cells = cellset_from_points(rng.uniform(0, 60, size=(40, 2)))
    radii = [5.0, 12.0, 25.0, 60.0]
    edge_sets = [threshold_graph(cells, r).edges for r in radii]
    for small, big in zip(edge_sets, edge_sets[1:]):
        assert small <= big


def test_construction_is_deterministic():
    rng = np.random.default_rng(53)
    pts = rng.uniform(0, 80, size=(60, 2))
    a = knn_graph(cellset_from_points(pts), k=7)
    b = knn_graph(cellset_from_points(pts), k=7)
    np.testing.assert_array_equal(a.edge_array, b.edge_array)
    ta = threshold_graph(cellset_from_points(pts), 15.0)
    tb = threshold_graph(cellset_from_points(pts), 15.0)
    np.testing.assert_array_equal(ta.edge_array, tb.edge_array)


def test_graph_validation():
    with pytest.raises(ValidationError):
        CellGraph(n=3, edge_array=np.array([[0, 0]]), kind="knn", param=1)
    with pytest.raises(ValidationError):
        CellGraph(n=3, edge_array=np.array([[0, 3]]), kind="knn", param=1)
    with pytest.raises(ValidationError):
        CellGraph(n=3, edge_array=np.array([[0, 1], [0, 1]]), kind="knn", param=1)


def test_degrees_and_adjacency():
    g = CellGraph(n=4, edge_array=np.array([[0, 1], [1, 2], [2, 3], [0, 3]]), kind="threshold", param=1)
    np.testing.assert_array_equal(g.degrees(), [2, 2, 2, 2])
    adj = g.adjacency().toarray()
    np.testing.assert_array_equal(adj, adj.T)
    assert adj.sum() == 8
    indptr, indices = g.neighbor_lists()
    assert indices[indptr[1] : indptr[2]].tolist() == [0, 2]


def test_edge_csv_export(tmp_path):
    g = CellGraph(n=3, edge_array=np.array([[1, 2], [0, 2]]), kind="knn", param=1)
    path = tmp_path / "edges.csv"
    save_edges(g, path)
    assert path.read_text() == "i,j\n0,2\n1,2\n"
