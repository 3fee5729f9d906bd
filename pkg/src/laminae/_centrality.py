"""JIT kernels for per-node graph statistics.

Brandes betweenness and closeness run one BFS per source; triangle counts use
sorted-adjacency merges. Pure-Python equivalents are kept in the test suite as
oracles; these kernels exist because the r=200 threshold graph of a full slice
has ~10^9 edge relaxations.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def brandes_betweenness_closeness(indptr, indices, n):
    """Returns (betweenness, closeness).

    Betweenness sums pair dependencies over unordered pairs (the two BFS
    directions of an undirected graph each count every pair, hence the final
    halving). Closeness is (reachable-1)/sum-of-distances within the node's
    component, 0 for isolated nodes.
    """
    betweenness = np.zeros(n, dtype=np.float64)
    closeness = np.zeros(n, dtype=np.float64)
    dist = np.empty(n, dtype=np.int64)
    sigma = np.empty(n, dtype=np.float64)
    delta = np.empty(n, dtype=np.float64)
    order = np.empty(n, dtype=np.int64)
    for s in range(n):
        for v in range(n):
            dist[v] = -1
            sigma[v] = 0.0
            delta[v] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            dv = dist[v]
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                if dist[w] < 0:
                    dist[w] = dv + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dv + 1:
                    sigma[w] += sigma[v]
        total = 0
        for v in range(n):
            if dist[v] > 0:
                total += dist[v]
        if total > 0:
            closeness[s] = float(tail - 1) / float(total)
        for i in range(tail - 1, 0, -1):
            v = order[i]
            coeff = (1.0 + delta[v]) / sigma[v]
            dv = dist[v]
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                if dist[w] == dv - 1:
                    delta[w] += sigma[w] * coeff
            betweenness[v] += delta[v]
    for v in range(n):
        betweenness[v] *= 0.5
    return betweenness, closeness


@njit(cache=True)
def triangle_counts(indptr, indices, n):
    """Triangles through each node; indices must be sorted within each row."""
    tri = np.zeros(n, dtype=np.int64)
    for u in range(n):
        total = 0
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            # merge-intersect sorted neighbor lists of u and v
            a = indptr[u]
            b = indptr[v]
            ae = indptr[u + 1]
            be = indptr[v + 1]
            while a < ae and b < be:
                x = indices[a]
                y = indices[b]
                if x == y:
                    total += 1
                    a += 1
                    b += 1
                elif x < y:
                    a += 1
                else:
                    b += 1
        tri[u] = total // 2  # each triangle found via both of its other vertices
    return tri
