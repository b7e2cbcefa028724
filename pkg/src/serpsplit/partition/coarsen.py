"""Coarsening by heavy-edge matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from serpsplit.partition._graph import WGraph, contract
from serpsplit.project import ProductGraph

# a level that removes fewer than this share of nodes ends coarsening
MIN_SHRINK = 0.05


@dataclass
class CoarseLevel:
    """One level of the hierarchy.

    ``cmap[v]`` is the node of this level that node ``v`` of the previous
    (finer) level was merged into; ``None`` for the input graph.
    """

    graph: WGraph
    cmap: list[int] | None = None


def heavy_edge_matching(g: WGraph, rng: np.random.Generator,
                        max_vwgt: int | None = None) -> tuple[list[int], int]:
    """One matching pass; returns ``(cmap, n_coarse)``.

    Nodes are visited in a random order. An unmatched node is paired with the
    unmatched neighbour of heaviest edge weight whose
    merged node weight stays within ``max_vwgt``; ties go to the neighbour of
    lower degree, then lower id. Leftover isolated nodes are then paired with
    each other in visit order, under the same weight cap.
    """
    n = g.n
    xadj, adjncy, adjwgt, vwgt = g.xadj, g.adjncy, g.adjwgt, g.vwgt
    cap = max_vwgt if max_vwgt is not None else float("inf")
    match = [-1] * n
    order = rng.permutation(n).tolist()
    isolated = []
    for v in order:
        if match[v] != -1:
            continue
        lo, hi = xadj[v], xadj[v + 1]
        if lo == hi:
            isolated.append(v)
            continue
        best, bw, bd = -1, -1, 0
        room = cap - vwgt[v]
        for j in range(lo, hi):
            u = adjncy[j]
            if match[u] == -1 and vwgt[u] <= room:
                w = adjwgt[j]
                if w >= bw:
                    d = xadj[u + 1] - xadj[u]
                    if w > bw or d < bd or (d == bd and u < best):
                        best, bw, bd = u, w, d
        if best >= 0:
            match[v] = best
            match[best] = v
        else:
            match[v] = v

    pending = -1
    for v in isolated:
        if pending < 0:
            pending = v
        elif vwgt[pending] + vwgt[v] <= cap:
            match[pending], match[v] = v, pending
            pending = -1
        else:
            match[pending] = pending
            pending = v
    if pending >= 0:
        match[pending] = pending

    cmap = [-1] * n
    nc = 0
    for v in range(n):
        if cmap[v] == -1:
            cmap[v] = nc
            cmap[match[v]] = nc
            nc += 1
    return cmap, nc


def coarsen(g: ProductGraph | WGraph, stop_size: int, rng: np.random.Generator | int | None = None,
            max_vwgt: int | None = None, min_size: int = 1) -> list[CoarseLevel]:
    """Build the coarsening hierarchy.

    Parameters
    ----------
    g : ProductGraph or WGraph
    stop_size : int
        Stop once a level has at most this many nodes.
    rng : Generator or seed
    max_vwgt : int, optional
        Cap on merged node weight. Defaults to ``1.5 * total / stop_size``
        so that no supernode outgrows a fraction of a cluster.
    min_size : int
        A level with fewer nodes than this is discarded (the partitioner
        passes ``k`` so the coarsest graph can still host ``k`` clusters).

    Returns
    -------
    list of CoarseLevel
        ``levels[0]`` is the input graph. Coarsening also stops when a pass
        shrinks the node count by less than 5%; that pass is dropped.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    wg = g if isinstance(g, WGraph) else WGraph.from_product_graph(g)
    if max_vwgt is None:
        max_vwgt = max(1, int(1.5 * wg.total_vwgt / max(stop_size, 1)))
    levels = [CoarseLevel(wg)]
    cur = wg
    while cur.n > stop_size:
        cmap, nc = heavy_edge_matching(cur, rng, max_vwgt)
        if nc > (1.0 - MIN_SHRINK) * cur.n or nc < min_size:
            break
        cur = contract(cur, cmap, nc)
        levels.append(CoarseLevel(cur, cmap))
    return levels


def project_labels(labels: list[int], cmap: list[int]) -> list[int]:
    """Give every fine node the label of the supernode it was merged into."""
    return [labels[c] for c in cmap]
