"""Adjacency-list graph used inside the partitioner.

Edge weights are held as Python integers: every float64 weight is an exact
dyadic rational, so scaling all of them by a common power of two gives
integers whose sums (edgecuts, contracted weights, gains) carry no rounding.
Converting back divides by that power of two, which Python rounds correctly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from serpsplit.project import ProductGraph


def exact_int_weights(w: np.ndarray) -> tuple[list[int], int]:
    """Scale positive finite floats to integers sharing one power-of-two scale.

    Returns ``(ints, shift)`` with ``w[i] == ints[i] * 2.0**shift`` exactly.
    """
    w = np.asarray(w, dtype=np.float64)
    if len(w) == 0:
        return [], 0
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be positive and finite")
    mant, expo = np.frexp(w)
    mant = (mant * float(1 << 53)).astype(np.int64)
    expo = expo.astype(np.int64) - 53
    # drop trailing zero bits so the integers stay small for "round" weights
    tz = np.zeros_like(mant)
    m = mant.copy()
    for _ in range(53):
        odd = (m & 1) == 1
        if odd.all():
            break
        step = ~odd
        m = np.where(step, m >> 1, m)
        tz += step
    expo = expo + tz
    shift = int(expo.min())
    rel = (expo - shift).tolist()
    return [int(mm) << s for mm, s in zip(m.tolist(), rel)], shift


@dataclass
class WGraph:
    """Symmetric weighted graph with integer edge and node weights.

    ``adjncy[xadj[v]:xadj[v+1]]`` are the neighbours of ``v`` (sorted),
    ``adjwgt`` the matching scaled integer weights; the float weight of an
    integer ``x`` is ``x * 2**shift``.
    """

    xadj: list[int]
    adjncy: list[int]
    adjwgt: list[int]
    vwgt: list[int]
    shift: int

    @property
    def n(self) -> int:
        return len(self.vwgt)

    @property
    def n_edges(self) -> int:
        return len(self.adjncy) // 2

    def to_float(self, x: int) -> float:
        """Correctly rounded float value of a scaled integer weight."""
        if self.shift >= 0:
            return float(x << self.shift)
        return x / (1 << -self.shift)

    @property
    def total_int(self) -> int:
        return sum(self.adjwgt) // 2

    @property
    def total_weight(self) -> float:
        return self.to_float(self.total_int)

    @property
    def total_vwgt(self) -> int:
        return sum(self.vwgt)

    def cut_int(self, labels) -> int:
        xadj, adjncy, adjwgt = self.xadj, self.adjncy, self.adjwgt
        cut = 0
        for v in range(self.n):
            lv = labels[v]
            for j in range(xadj[v], xadj[v + 1]):
                u = adjncy[j]
                if u > v and labels[u] != lv:
                    cut += adjwgt[j]
        return cut

    @classmethod
    def from_product_graph(cls, g: ProductGraph) -> "WGraph":
        csr = g.csr
        ints, shift = exact_int_weights(csr.data)
        return cls(csr.indptr.tolist(), csr.indices.tolist(), ints,
                   [int(x) for x in g.node_weight.tolist()], shift)

    def to_product_graph(self) -> ProductGraph:
        src, dst, w = [], [], []
        xadj, adjncy, adjwgt = self.xadj, self.adjncy, self.adjwgt
        for v in range(self.n):
            for j in range(xadj[v], xadj[v + 1]):
                u = adjncy[j]
                if u > v:
                    src.append(v)
                    dst.append(u)
                    w.append(self.to_float(adjwgt[j]))
        return ProductGraph.from_arrays(self.n, src, dst, w, node_weight=self.vwgt)

    def subgraph(self, nodes: list[int]) -> tuple["WGraph", list[int]]:
        """Induced subgraph on ``nodes`` (new ids follow list order)."""
        local = {v: i for i, v in enumerate(nodes)}
        xadj, adjncy, adjwgt = [0], [], []
        for v in nodes:
            for j in range(self.xadj[v], self.xadj[v + 1]):
                u = local.get(self.adjncy[j])
                if u is not None:
                    adjncy.append(u)
                    adjwgt.append(self.adjwgt[j])
            xadj.append(len(adjncy))
        return WGraph(xadj, adjncy, adjwgt, [self.vwgt[v] for v in nodes], self.shift), nodes


def contract(g: WGraph, cmap: list[int], n_coarse: int) -> WGraph:
    """Collapse nodes sharing a ``cmap`` id; parallel edges add, internal edges vanish."""
    acc: list[dict[int, int]] = [{} for _ in range(n_coarse)]
    vwgt = [0] * n_coarse
    xadj, adjncy, adjwgt = g.xadj, g.adjncy, g.adjwgt
    for v in range(g.n):
        cv = cmap[v]
        vwgt[cv] += g.vwgt[v]
        d = acc[cv]
        for j in range(xadj[v], xadj[v + 1]):
            cu = cmap[adjncy[j]]
            if cu != cv:
                d[cu] = d.get(cu, 0) + adjwgt[j]
    cx, cadj, cw = [0], [], []
    for d in acc:
        for u in sorted(d):
            cadj.append(u)
            cw.append(d[u])
        cx.append(len(cadj))
    return WGraph(cx, cadj, cw, vwgt, g.shift)


def balance_limit(total_vwgt: int, k: int, epsilon: float, max_vwgt: int) -> int:
    """Largest integer cluster node-weight allowed.

    ``(1 + epsilon)`` times the average, widened to ``average + max_vwgt*(1 - 1/k)``
    when indivisible node weights make the tighter bound infeasible (for unit
    weights that is exactly ``ceil(average)``).
    """
    avg = total_vwgt / k
    bound = max((1.0 + epsilon) * avg, avg + max_vwgt * (1.0 - 1.0 / k))
    return math.floor(bound + 1e-9 * max(1.0, avg))
