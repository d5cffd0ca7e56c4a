"""Pure-Python matching kernels: exact assignment and uniform-marginal OT.

These are the hot scalar loops of the package; a Cython twin with identical
semantics lives in ``matching_cy.pyx``. Both are exercised by the same tests.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """O(n^3) Kuhn-Munkres with dual potentials.

    Returns (col_for_row, total_cost). Deterministic: scanning order is
    ascending indices throughout.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)       # p[j] = row matched to column j (1-based)
    way = [0] * (n + 1)
    c = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_for_row = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        col_for_row[p[j] - 1] = j - 1
    total = float(cost[np.arange(n), col_for_row].sum())
    return col_for_row, total


def solve_transport(cost: np.ndarray, supply: np.ndarray,
                    demand: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact transportation problem on a dense bipartite graph.

    Successive shortest augmenting paths with dual potentials (Dijkstra on
    reduced costs). Costs must be nonnegative. supply/demand are integral
    masses with equal totals; returns (flow matrix, total cost).
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    supply = np.asarray(supply, dtype=np.int64).copy()
    demand = np.asarray(demand, dtype=np.int64).copy()
    if supply.sum() != demand.sum():
        raise ValueError("unbalanced transportation problem")
    flow = np.zeros((n, m), dtype=np.int64)
    pot_u = np.zeros(n)
    pot_v = np.zeros(m)
    remaining = int(supply.sum())

    while remaining > 0:
        # Dijkstra over sources (0..n-1) and sinks (n..n+m-1)
        size = n + m
        dist = np.full(size, math.inf)
        prev = np.full(size, -1, dtype=np.intp)
        done = np.zeros(size, dtype=bool)
        for i in range(n):
            if supply[i] > 0:
                dist[i] = 0.0
        while True:
            u_node = -1
            best = math.inf
            for k in range(size):
                if not done[k] and dist[k] < best:
                    best = dist[k]
                    u_node = k
            if u_node < 0:
                break
            done[u_node] = True
            if u_node < n:
                i = u_node
                base = dist[i]
                for j in range(m):
                    rc = cost[i, j] - pot_u[i] - pot_v[j]
                    if rc < 0.0:
                        rc = 0.0
                    nd = base + rc
                    if nd < dist[n + j]:
                        dist[n + j] = nd
                        prev[n + j] = i
            else:
                j = u_node - n
                base = dist[u_node]
                for i in range(n):
                    if flow[i, j] > 0:
                        rc = pot_u[i] + pot_v[j] - cost[i, j]
                        if rc < 0.0:
                            rc = 0.0
                        nd = base + rc
                        if nd < dist[i]:
                            dist[i] = nd
                            prev[i] = n + j

        # pick reachable sink with demand, smallest index for determinism
        target = -1
        for j in range(m):
            if demand[j] > 0 and not math.isinf(dist[n + j]):
                if target < 0 or dist[n + j] < dist[n + target]:
                    target = j
        if target < 0:
            raise RuntimeError("no augmenting path in transportation problem")

        # bottleneck along the path
        path = []
        node = n + target
        while prev[node] >= 0:
            path.append((int(prev[node]), int(node)))
            node = int(prev[node])
        start = node
        bottleneck = min(int(supply[start]), int(demand[target]))
        for a, b in path:
            if a >= n:  # residual arc sink->source
                bottleneck = min(bottleneck, int(flow[b, a - n]))
        for a, b in path:
            if a < n and b >= n:
                flow[a, b - n] += bottleneck
            else:
                flow[b, a - n] -= bottleneck
        supply[start] -= bottleneck
        demand[target] -= bottleneck
        remaining -= bottleneck

        # update potentials for reached nodes
        for i in range(n):
            if not math.isinf(dist[i]):
                pot_u[i] -= dist[i]
        for j in range(m):
            if not math.isinf(dist[n + j]):
                pot_v[j] += dist[n + j]

    total = float((flow * cost).sum())
    return flow, total
