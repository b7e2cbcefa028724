"""Weighted one-mode projection of the query/product graph onto products.

Two products are linked when some query drove impressions to both. Each such
query ``q`` contributes

    (1 / ln f(q)) * min(w(q, a), w(q, b)) / max(w(q, a), w(q, b))

to the pair weight, where ``f(q)`` is the number of distinct products of ``q``
and ``w`` the impression weights. Generic queries reaching many products are
damped by the log factor; the ratio term rewards pairs that the query exposes
at a similar rate.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from serpsplit.ingest import BipartiteGraph
from serpsplit.io import atomic_write_json, atomic_write_text

__all__ = [
    "ProductGraph",
    "ProjectionConfigError",
    "clustering_coefficient",
    "load_product_graph",
    "project",
    "save_product_graph",
]

# upper bound on pairs materialized at once
_PAIR_CHUNK = 4_000_000


class ProjectionConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProductGraph:
    """Undirected weighted product graph.

    Edges are stored once as ``(src, dst, weight)`` with ``src < dst``, sorted
    by ``(src, dst)``. ``node_weight`` is used by the partitioner's balance
    constraint.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    node_weight: np.ndarray
    products: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.src) == len(self.dst) == len(self.weight)):
            raise ValueError("edge arrays differ in length")
        if len(self.node_weight) != self.n_nodes:
            raise ValueError("node_weight length != n_nodes")
        if self.products and len(self.products) != self.n_nodes:
            raise ValueError("products length != n_nodes")
        for a in (self.src, self.dst, self.weight, self.node_weight):
            a.setflags(write=False)

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int, float]],
                   node_weight: Sequence[int] | None = None, products: Sequence[str] = (),
                   meta: dict | None = None) -> "ProductGraph":
        """Build from ``(a, b, w)`` triples in any orientation.

        Parallel edges are summed; self-loops and non-positive weights raise.
        """
        triples = list(edges)
        if triples:
            a, b, w = (np.asarray(c) for c in zip(*triples))
        else:
            a = b = np.zeros(0, dtype=np.int64)
            w = np.zeros(0)
        return cls.from_arrays(n_nodes, a, b, w, node_weight, products, meta)

    @classmethod
    def from_arrays(cls, n_nodes, a, b, w, node_weight=None, products=(), meta=None) -> "ProductGraph":
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        if np.any(a == b):
            raise ValueError("self-loops are not allowed")
        if np.any(w <= 0):
            raise ValueError("edge weights must be positive")
        if len(a) and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n_nodes):
            raise ValueError("edge endpoint out of range")
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * n_nodes + hi
        uniq, inv = np.unique(key, return_inverse=True)
        wsum = np.bincount(inv, weights=w, minlength=len(uniq)) if len(uniq) else np.zeros(0)
        if node_weight is None:
            node_weight = np.ones(n_nodes, dtype=np.int64)
        return cls(
            n_nodes=int(n_nodes), src=uniq // n_nodes if n_nodes else uniq, dst=uniq % n_nodes if n_nodes else uniq,
            weight=wsum, node_weight=np.asarray(node_weight, dtype=np.int64).copy(),
            products=tuple(products), meta=dict(meta or {}),
        )

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @cached_property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Symmetric adjacency matrix (both orientations stored)."""
        n = self.n_nodes
        m = sp.csr_matrix(
            (np.concatenate([self.weight, self.weight]),
             (np.concatenate([self.src, self.dst]), np.concatenate([self.dst, self.src]))),
            shape=(n, n),
        )
        m.sort_indices()
        return m

    def edge_weight(self, a: int, b: int) -> float:
        """Weight of the unordered pair ``{a, b}``; 0.0 when absent."""
        if a == b:
            return 0.0
        lo, hi = min(a, b), max(a, b)
        key = lo * self.n_nodes + hi
        keys = self.src * self.n_nodes + self.dst
        i = np.searchsorted(keys, key)
        if i < len(keys) and keys[i] == key:
            return float(self.weight[i])
        return 0.0

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(w) for a, b, w in zip(self.src, self.dst, self.weight)}

    def with_node_weight(self, node_weight: Sequence[int]) -> "ProductGraph":
        return ProductGraph(self.n_nodes, self.src, self.dst, self.weight,
                            np.asarray(node_weight, dtype=np.int64).copy(), self.products, dict(self.meta))


def _query_pairs(bi: BipartiteGraph, queries: np.ndarray, f: int):
    """All co-linked product pairs for queries that share degree ``f``."""
    adj = bi.adjacency
    starts = adj.indptr[queries]
    offs = starts[:, None] + np.arange(f)[None, :]
    prods = adj.indices[offs]
    wts = adj.data[offs].astype(np.float64)
    iu, ju = np.triu_indices(f, 1)
    wa, wb = wts[:, iu], wts[:, ju]
    contrib = (np.minimum(wa, wb) / np.maximum(wa, wb)) / np.log(f)
    qcol = np.broadcast_to(queries[:, None], contrib.shape)
    return qcol.ravel(), prods[:, iu].ravel(), prods[:, ju].ravel(), contrib.ravel()


def project(bi: BipartiteGraph, hub_cap: int | None = None) -> ProductGraph:
    """Project ``bi`` onto its products.

    Parameters
    ----------
    bi : BipartiteGraph
    hub_cap : int, optional
        Queries linking more than ``hub_cap`` products are skipped entirely.

    Returns
    -------
    ProductGraph
        Shares the product index of ``bi``. Run statistics (query count,
        skipped hubs, edge count, cap) are in ``.meta``.
    """
    if hub_cap is not None and hub_cap < 2:
        raise ProjectionConfigError(f"hub_cap must be >= 2, got {hub_cap}")
    if bi.n_edges == 0:
        raise ProjectionConfigError("bipartite graph is empty")

    deg = bi.query_degree
    eligible = deg >= 2
    skipped = np.zeros_like(eligible)
    if hub_cap is not None:
        skipped = deg > hub_cap
        eligible &= ~skipped

    parts = []
    for f in np.unique(deg[eligible]).tolist():
        qs = np.flatnonzero(eligible & (deg == f))
        per_query = f * (f - 1) // 2
        step = max(1, _PAIR_CHUNK // per_query)
        for i in range(0, len(qs), step):
            parts.append(_query_pairs(bi, qs[i:i + step], f))

    n = bi.n_products
    if parts:
        q, a, b, c = (np.concatenate(x) for x in zip(*parts))
        # accumulate in ascending query order so sums are bit-reproducible
        order = np.argsort(q, kind="stable")
        key = a[order] * n + b[order]
        uniq, inv = np.unique(key, return_inverse=True)
        wsum = np.bincount(inv, weights=c[order], minlength=len(uniq))
        keep = wsum > 0
        uniq, wsum = uniq[keep], wsum[keep]
        src, dst = uniq // n, uniq % n
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        wsum = np.zeros(0)

    meta = {
        "n_queries": int(bi.n_queries),
        "n_contributing_queries": int(eligible.sum()),
        "n_hub_skipped": int(skipped.sum()),
        "hub_cap": hub_cap,
        "n_products": int(n),
        "n_edges": int(len(src)),
    }
    return ProductGraph(n_nodes=n, src=src.astype(np.int64), dst=dst.astype(np.int64),
                        weight=wsum.astype(np.float64), node_weight=np.ones(n, dtype=np.int64),
                        products=tuple(bi.products), meta=meta)


def clustering_coefficient(g: ProductGraph) -> float:
    """Global clustering coefficient (transitivity) of the unweighted skeleton.

    ``3 * triangles / connected triples``; 0 for graphs with fewer than three
    nodes or no connected triple.
    """
    if g.n_nodes < 3 or g.n_edges == 0:
        return 0.0
    a = g.csr.copy()
    a.data[:] = 1.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    triples = float(np.sum(deg * (deg - 1)))
    if triples == 0:
        return 0.0
    closed = float((a @ a).multiply(a).sum())
    return closed / triples


EDGES_HEADER = "product_a\tproduct_b\tweight"


def save_product_graph(g: ProductGraph, path: str | os.PathLike,
                       meta_path: str | os.PathLike | None = None) -> None:
    """Write the edge list TSV (ids, ``a < b``, sorted) and a metadata JSON."""
    lines = [EDGES_HEADER]
    lines += [f"{a}\t{b}\t{w!r}" for a, b, w in zip(g.src.tolist(), g.dst.tolist(), g.weight.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")
    if meta_path is not None:
        atomic_write_json(meta_path, {**g.meta, "n_nodes": g.n_nodes, "n_edges": g.n_edges})


def load_product_graph(path: str | os.PathLike, n_nodes: int | None = None,
                       products: Sequence[str] = (), meta_path: str | os.PathLike | None = None) -> ProductGraph:
    with open(path, encoding="utf-8") as fh:
        rows = [line.split("\t") for line in fh.read().splitlines()[1:] if line]
    a = np.array([int(r[0]) for r in rows], dtype=np.int64)
    b = np.array([int(r[1]) for r in rows], dtype=np.int64)
    w = np.array([float(r[2]) for r in rows])
    meta = {}
    if meta_path is not None and Path(meta_path).exists():
        meta = json.loads(Path(meta_path).read_text())
    if n_nodes is None:
        n_nodes = len(products) if products else meta.get("n_nodes", int(max(a.max(), b.max()) + 1) if len(a) else 0)
    return ProductGraph.from_arrays(n_nodes, a, b, w, products=products, meta=meta)
