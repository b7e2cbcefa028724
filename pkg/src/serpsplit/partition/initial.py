"""Initial partitioning of the coarsest graph by recursive greedy bisection."""

from __future__ import annotations

import heapq
import math

import numpy as np

from serpsplit.partition._graph import WGraph, balance_limit
from serpsplit.partition.refine import PartState, fill_empty, fm_refine, rebalance

DEFAULT_RESTARTS = 8


def grow_bisection(g: WGraph, target: float, rng: np.random.Generator) -> list[int]:
    """Grow region 0 from a random seed node until it weighs ``target``.

    The next node absorbed is the boundary node maximizing
    ``weight into region - weight to the rest``. When the region's component
    is exhausted the growth restarts from a random unabsorbed node, which
    packs small components whole.
    """
    n = g.n
    xadj, adjncy, adjwgt, vwgt = g.xadj, g.adjncy, g.adjwgt, g.vwgt
    labels = [1] * n
    gain = [-sum(adjwgt[xadj[v]:xadj[v + 1]]) for v in range(n)]
    order = rng.permutation(n).tolist()
    nxt = 0
    heap: list[tuple[int, int]] = []
    region_w = 0
    while region_w < target:
        v = -1
        while heap:
            neg, u = heapq.heappop(heap)
            if labels[u] == 1 and gain[u] == -neg:
                v = u
                break
        if v < 0:
            while nxt < n and labels[order[nxt]] == 0:
                nxt += 1
            if nxt == n:
                break
            v = order[nxt]
        labels[v] = 0
        region_w += vwgt[v]
        for j in range(xadj[v], xadj[v + 1]):
            u = adjncy[j]
            if labels[u] == 1:
                gain[u] += 2 * adjwgt[j]
                heapq.heappush(heap, (-gain[u], u))
    return labels


def recursive_bisection(g: WGraph, k: int, epsilon: float, rng: np.random.Generator) -> list[int]:
    """Split into ``k`` parts by halving the cluster count at each step.

    Each bisection targets the weight share of its cluster counts and is
    polished by a two-way boundary refinement before recursing.
    """
    labels = [0] * g.n

    def split(nodes: list[int], kk: int, offset: int) -> None:
        if kk == 1 or not nodes:
            for v in nodes:
                labels[v] = offset
            return
        k1 = kk // 2
        sub, _ = g.subgraph(nodes)
        total = sub.total_vwgt
        targets = (total * k1 / kk, total * (kk - k1) / kk)
        local = grow_bisection(sub, targets[0], rng)
        maxv = max(sub.vwgt)
        limit = [math.floor(max((1 + epsilon) * t, t + maxv) + 1e-9) for t in targets]
        state = PartState(sub, local, 2)
        rebalance(state, limit)
        fm_refine(state, limit)
        left = [nodes[i] for i, p in enumerate(state.labels) if p == 0]
        right = [nodes[i] for i, p in enumerate(state.labels) if p == 1]
        split(left, k1, offset)
        split(right, kk - k1, offset + k1)

    split(list(range(g.n)), k, 0)
    return labels


def initial_labels(g: WGraph, k: int, epsilon: float, rng: np.random.Generator,
                   restarts: int = DEFAULT_RESTARTS, limit: int | None = None) -> PartState:
    """Best of ``restarts`` balanced recursive bisections, by edgecut.

    ``limit`` overrides the cluster weight bound derived from ``g`` itself;
    the multilevel driver passes the finest graph's bound here.
    """
    n = g.n
    if k > n:
        raise ValueError(f"more clusters than vertices (k={k}, |V|={n})")
    if k == 1:
        return PartState(g, [0] * n, 1)
    if k == n:
        return PartState(g, list(range(n)), k)

    if limit is None:
        limit = balance_limit(g.total_vwgt, k, epsilon, max(g.vwgt))
    limit = [limit] * k
    best = None
    for _ in range(max(1, restarts)):
        state = PartState(g, recursive_bisection(g, k, epsilon, rng), k)
        ok = rebalance(state, limit)
        fill_empty(state)
        fm_refine(state, limit)
        key = (not ok, state.cut)
        if best is None or key < best[0]:
            best = (key, state)
    return best[1]
