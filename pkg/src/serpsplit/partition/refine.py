"""Boundary Fiduccia-Mattheyses refinement and balance repair."""

from __future__ import annotations

import heapq
from typing import Sequence

from serpsplit.partition._graph import WGraph


class PartState:
    """Mutable labels plus per-cluster node weight and node count."""

    def __init__(self, g: WGraph, labels: Sequence[int], k: int):
        self.g = g
        self.k = k
        self.labels = list(labels)
        self.pwgt = [0] * k
        self.count = [0] * k
        for v, p in enumerate(self.labels):
            self.pwgt[p] += g.vwgt[v]
            self.count[p] += 1
        self.cut = g.cut_int(self.labels)

    def connectivity(self, v: int) -> dict[int, int]:
        g, labels = self.g, self.labels
        lo, hi = g.xadj[v], g.xadj[v + 1]
        conn: dict[int, int] = {}
        get = conn.get
        for u, w in zip(g.adjncy[lo:hi], g.adjwgt[lo:hi]):
            p = labels[u]
            conn[p] = get(p, 0) + w
        return conn

    def move(self, v: int, to: int, gain: int) -> None:
        frm = self.labels[v]
        w = self.g.vwgt[v]
        self.labels[v] = to
        self.pwgt[frm] -= w
        self.pwgt[to] += w
        self.count[frm] -= 1
        self.count[to] += 1
        self.cut -= gain


def _best_move(state: PartState, v: int, limit: Sequence[int]) -> tuple[int, int]:
    """Highest-gain balanced destination of ``v`` among adjacent clusters.

    Returns ``(gain, cluster)``; ``cluster`` is -1 when ``v`` has no
    admissible move (interior node, would empty its cluster, or every
    adjacent cluster is full).
    """
    own = state.labels[v]
    if state.count[own] <= 1:
        return 0, -1
    conn = state.connectivity(v)
    internal = conn.get(own, 0)
    w = state.g.vwgt[v]
    best_gain, best_p = 0, -1
    for p, c in conn.items():
        if p == own or state.pwgt[p] + w > limit[p]:
            continue
        gain = c - internal
        if best_p < 0 or gain > best_gain or (gain == best_gain and p < best_p):
            best_gain, best_p = gain, p
    return best_gain, best_p


def fm_pass(state: PartState, limit: Sequence[int]) -> int:
    """One greedy boundary pass; returns the number of moves made.

    The boundary node with the largest positive gain whose move keeps its
    destination within ``limit`` is moved and locked, and its neighbours'
    gains are refreshed. The pass ends when no positive-gain admissible move
    is left.
    """
    g, labels = state.g, state.labels
    xadj, adjncy = g.xadj, g.adjncy
    heap: list[tuple[int, int]] = []
    current: dict[int, int] = {}
    for v in range(g.n):
        lv = labels[v]
        for j in range(xadj[v], xadj[v + 1]):
            if labels[adjncy[j]] != lv:
                gain, p = _best_move(state, v, limit)
                if p >= 0 and gain > 0:
                    current[v] = gain
                    heap.append((-gain, v))
                break
    heapq.heapify(heap)
    locked = set()
    moves = 0
    while heap:
        neg, v = heapq.heappop(heap)
        if v in locked or current.get(v) != -neg:
            continue
        gain, p = _best_move(state, v, limit)
        if p < 0 or gain <= 0:
            current.pop(v, None)
            continue
        if gain != -neg:
            current[v] = gain
            heapq.heappush(heap, (-gain, v))
            continue
        state.move(v, p, gain)
        locked.add(v)
        current.pop(v, None)
        moves += 1
        for j in range(xadj[v], xadj[v + 1]):
            u = adjncy[j]
            if u in locked:
                continue
            ug, up = _best_move(state, u, limit)
            if up >= 0 and ug > 0:
                if current.get(u) != ug:
                    current[u] = ug
                    heapq.heappush(heap, (-ug, u))
            else:
                current.pop(u, None)
    return moves


def fm_refine(state: PartState, limit: Sequence[int], passes: int = 4) -> None:
    for _ in range(passes):
        if fm_pass(state, limit) == 0:
            break


def rebalance(state: PartState, limit: Sequence[int]) -> bool:
    """Move nodes out of overweight clusters, losing as little cut as possible.

    Nodes of an overweight cluster are tried in order of the gain of their
    best admissible destination (adjacent or not). Returns ``True`` when every
    cluster ends within its limit.
    """
    g = state.g
    k = state.k
    for _ in range(g.n):
        over = [p for p in range(k) if state.pwgt[p] > limit[p]]
        if not over:
            return True
        src = max(over, key=lambda p: (state.pwgt[p] - limit[p], -p))
        cands = []
        for v in range(g.n):
            if state.labels[v] != src:
                continue
            conn = state.connectivity(v)
            internal = conn.get(src, 0)
            w = g.vwgt[v]
            best = None
            for p in range(k):
                if p == src or state.pwgt[p] + w > limit[p]:
                    continue
                key = (conn.get(p, 0) - internal, -state.pwgt[p], -p)
                if best is None or key > best:
                    best = key
            if best is not None:
                cands.append((best[0], -v, -best[2]))
        if not cands:
            return False
        moved = False
        for _gain, negv, _p in sorted(cands, reverse=True):
            v = -negv
            if state.pwgt[src] <= limit[src] or state.count[src] <= 1:
                break
            conn = state.connectivity(v)
            internal = conn.get(src, 0)
            w = g.vwgt[v]
            best = None
            for p in range(k):
                if p == src or state.pwgt[p] + w > limit[p]:
                    continue
                key = (conn.get(p, 0) - internal, -state.pwgt[p], -p)
                if best is None or key > best:
                    best = key
            if best is None:
                continue
            state.move(v, -best[2], best[0])
            moved = True
        if not moved:
            return False
    return all(state.pwgt[p] <= limit[p] for p in range(k))


def fill_empty(state: PartState) -> None:
    """Give every empty cluster one node taken from the most populous cluster."""
    g = state.g
    for p in range(state.k):
        if state.count[p]:
            continue
        src = max(range(state.k), key=lambda q: (state.count[q], -q))
        if state.count[src] <= 1:
            return
        best = None
        for v in range(g.n):
            if state.labels[v] != src:
                continue
            conn = state.connectivity(v)
            key = (conn.get(p, 0) - conn.get(src, 0), -g.vwgt[v], -v)
            if best is None or key > best:
                best = key
        v = -best[2]
        state.move(v, p, best[0])
