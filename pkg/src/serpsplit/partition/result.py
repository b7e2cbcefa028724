"""Partition result type and edgecut / leakage arithmetic."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from serpsplit.io import atomic_write_text
from serpsplit.partition._graph import WGraph, balance_limit
from serpsplit.project import ProductGraph


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of graph nodes to ``k`` clusters.

    ``edgecut`` is the weight of edges whose endpoints lie in different
    clusters and ``leakage = edgecut / total_weight`` (0 for edgeless graphs).
    Both are computed from exact integer sums, so ``edgecut + within_weight``
    reproduces ``total_weight``. ``max_cluster_weight`` is the balance limit
    the partition satisfies.
    """

    k: int
    assignment: np.ndarray
    cluster_sizes: np.ndarray
    edgecut: float
    leakage: float
    total_weight: float
    within_weight: float
    epsilon: float
    max_cluster_weight: int
    products: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.assignment.setflags(write=False)
        self.cluster_sizes.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.assignment)

    @property
    def is_balanced(self) -> bool:
        return bool(self.cluster_sizes.max(initial=0) <= self.max_cluster_weight)

    def as_mapping(self) -> dict[str, int]:
        """Product name -> cluster id (node ids are used when names are unknown)."""
        names = self.products or tuple(str(i) for i in range(self.n_nodes))
        return dict(zip(names, self.assignment.tolist()))

    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.k + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.k)]


def cut_and_total(wg: WGraph, labels: Sequence[int]) -> tuple[int, int]:
    return wg.cut_int(labels), wg.total_int


def make_partition(wg: WGraph, labels: Sequence[int], k: int, epsilon: float,
                   products: Sequence[str] = (), cut: int | None = None,
                   meta: dict | None = None) -> Partition:
    """Package labels on ``wg`` into a :class:`Partition`."""
    if cut is None:
        cut = wg.cut_int(labels)
    total = wg.total_int
    assignment = np.asarray(labels, dtype=np.int64)
    sizes = np.zeros(k, dtype=np.int64)
    np.add.at(sizes, assignment, np.asarray(wg.vwgt, dtype=np.int64))
    limit = balance_limit(wg.total_vwgt, k, epsilon, max(wg.vwgt, default=1))
    return Partition(
        k=k, assignment=assignment, cluster_sizes=sizes,
        edgecut=wg.to_float(cut),
        leakage=(cut / total) if total else 0.0,
        total_weight=wg.to_float(total),
        within_weight=wg.to_float(total - cut),
        epsilon=epsilon, max_cluster_weight=limit,
        products=tuple(products), meta=dict(meta or {}),
    )


def edgecut(g: ProductGraph, assignment: Sequence[int]) -> float:
    """Cross-cluster edge weight recomputed from scratch (correctly rounded)."""
    a = np.asarray(assignment)
    cross = a[g.src] != a[g.dst]
    return math.fsum(g.weight[cross].tolist())


def leakage(g: ProductGraph, assignment: Sequence[int]) -> float:
    total = math.fsum(g.weight.tolist())
    return edgecut(g, assignment) / total if total else 0.0


def save_assignment(p: Partition, path: str | os.PathLike) -> None:
    """CSV ``product,cluster_id`` in node-id order."""
    names = p.products or tuple(str(i) for i in range(p.n_nodes))
    lines = ["product,cluster_id"] + [f"{_csv_cell(n)},{c}" for n, c in zip(names, p.assignment.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_assignment(path: str | os.PathLike) -> dict[str, int]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        return {row["product"]: int(row["cluster_id"]) for row in csv.DictReader(fh)}


def _csv_cell(text: str) -> str:
    if any(c in text for c in ',"\n\r'):
        return '"' + text.replace('"', '""') + '"'
    return text
