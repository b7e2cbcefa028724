"""Multilevel balanced k-way partitioning: coarsen, partition, refine."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from serpsplit.partition._graph import WGraph, balance_limit
from serpsplit.partition.coarsen import CoarseLevel, coarsen, project_labels
from serpsplit.partition.initial import DEFAULT_RESTARTS, initial_labels
from serpsplit.partition.refine import PartState, fm_refine, rebalance
from serpsplit.partition.result import Partition, PartitionError, make_partition
from serpsplit.project import ProductGraph

DEFAULT_EPSILON = 0.05
DEFAULT_PASSES = 4
COARSEN_TO = 200
# the coarsest graph keeps at least this many nodes per cluster
NODES_PER_CLUSTER = 4


def _as_wgraph(g: ProductGraph | WGraph) -> WGraph:
    return g if isinstance(g, WGraph) else WGraph.from_product_graph(g)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def default_stop_size(k: int) -> int:
    return max(COARSEN_TO, NODES_PER_CLUSTER * k)


def initial_partition(g: ProductGraph | WGraph, k: int, epsilon: float = DEFAULT_EPSILON,
                      seed=None, restarts: int = DEFAULT_RESTARTS) -> Partition:
    """Balanced k-way partition of a small graph by recursive bisection.

    Raises
    ------
    PartitionError
        If ``k`` exceeds the number of vertices or is not positive.
    """
    wg = _as_wgraph(g)
    _check_k(k, wg.n)
    state = initial_labels(wg, k, epsilon, _rng(seed), restarts)
    products = g.products if isinstance(g, ProductGraph) else ()
    return make_partition(wg, state.labels, k, epsilon, products, cut=state.cut)


def fine_limit(g: WGraph, k: int, epsilon: float) -> int:
    return balance_limit(g.total_vwgt, k, epsilon, max(g.vwgt, default=1))


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise PartitionError(f"k must be >= 1, got {k}")
    if k > n:
        raise PartitionError(f"more clusters than vertices (k={k}, |V|={n})")


def refine(levels: Sequence[CoarseLevel], coarse: Partition | Sequence[int], k: int | None = None,
           epsilon: float | None = None, passes: int = DEFAULT_PASSES,
           products: Sequence[str] = ()) -> Partition:
    """Project a coarsest-level partition back to ``levels[0]``, refining as it goes.

    Every level uses the balance limit of ``levels[0]``. At each level (the
    coarsest included) the labels are first brought within it if needed,
    then improved by up to
    ``passes`` boundary FM passes. Per-level cuts are recorded in
    ``meta["levels"]`` from coarsest to finest.
    """
    if isinstance(coarse, Partition):
        labels = coarse.assignment.tolist()
        k = coarse.k if k is None else k
        epsilon = coarse.epsilon if epsilon is None else epsilon
    else:
        labels = list(coarse)
        if k is None:
            k = max(labels) + 1
    if epsilon is None:
        epsilon = DEFAULT_EPSILON

    fine = levels[0].graph
    # projection keeps cluster weights, so one bound for all levels means a
    # balanced coarse partition never needs repair further down
    limit = [fine_limit(fine, k, epsilon)] * k
    history = []
    state = None
    for i in range(len(levels) - 1, -1, -1):
        g = levels[i].graph
        if state is not None:
            labels = project_labels(state.labels, levels[i + 1].cmap)
        state = PartState(g, labels, k)
        projected = state.cut
        if any(w > limit[0] for w in state.pwgt):
            rebalance(state, limit)
        rebalanced = state.cut
        fm_refine(state, limit, passes)
        history.append({
            "level": i, "n_nodes": g.n,
            "projected_cut": g.to_float(projected),
            "rebalanced_cut": g.to_float(rebalanced),
            "refined_cut": g.to_float(state.cut),
            "incremental_cut_int": state.cut,
        })
    return make_partition(fine, state.labels, k, epsilon, products, cut=state.cut,
                          meta={"levels": history})


def partition_kway(g: ProductGraph, k: int, epsilon: float = DEFAULT_EPSILON, seed=0,
                   restarts: int = DEFAULT_RESTARTS, passes: int = DEFAULT_PASSES,
                   stop_size: int | None = None) -> Partition:
    """Partition ``g`` into ``k`` balanced clusters with small weighted edgecut.

    Parameters
    ----------
    g : ProductGraph
        Node weights in ``g.node_weight`` drive the balance constraint.
    k : int
        Number of clusters, ``1 <= k <= g.n_nodes``.
    epsilon : float
        Balance tolerance; no cluster may exceed ``(1 + epsilon)`` times the
        average node weight (relaxed just enough to be feasible when node
        weights are indivisible, see :func:`balance_limit`).
    seed : int or Generator
        All random choices (matching orders, bisection seeds) are drawn from
        one generator in a fixed order, so equal inputs give equal outputs.
    stop_size : int, optional
        Coarsening target; defaults to ``max(200, 4 * k)``.

    Returns
    -------
    Partition
    """
    wg = _as_wgraph(g)
    _check_k(k, wg.n)
    rng = _rng(seed)
    if stop_size is None:
        stop_size = default_stop_size(k)
    if k == 1 or k == wg.n:
        levels = [CoarseLevel(wg)]
    else:
        levels = coarsen(wg, stop_size, rng, min_size=k)
    state = initial_labels(levels[-1].graph, k, epsilon, rng, restarts, limit=fine_limit(wg, k, epsilon))
    part = refine(levels, state.labels, k, epsilon, passes, products=g.products)
    part.meta.update({"seed": seed if isinstance(seed, int) else None, "stop_size": stop_size,
                      "n_levels": len(levels), "coarsest_n": levels[-1].graph.n})
    return part
