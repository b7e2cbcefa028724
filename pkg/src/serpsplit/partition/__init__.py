"""Balanced k-way graph partitioning and cluster-count selection."""

from serpsplit.partition._graph import WGraph, balance_limit
from serpsplit.partition.coarsen import CoarseLevel, coarsen, heavy_edge_matching
from serpsplit.partition.kway import (
    DEFAULT_EPSILON,
    initial_partition,
    partition_kway,
    refine,
)
from serpsplit.partition.result import (
    Partition,
    PartitionError,
    edgecut,
    leakage,
    load_assignment,
    save_assignment,
)
from serpsplit.partition.sweep import (
    LeakageCurve,
    SweepPoint,
    elbow_index,
    leakage_sweep,
    load_curve,
    save_curve,
    select_k,
)

__all__ = [
    "DEFAULT_EPSILON",
    "CoarseLevel",
    "LeakageCurve",
    "Partition",
    "PartitionError",
    "SweepPoint",
    "WGraph",
    "balance_limit",
    "coarsen",
    "edgecut",
    "elbow_index",
    "heavy_edge_matching",
    "initial_partition",
    "leakage",
    "leakage_sweep",
    "load_assignment",
    "load_curve",
    "partition_kway",
    "refine",
    "save_assignment",
    "save_curve",
    "select_k",
]
