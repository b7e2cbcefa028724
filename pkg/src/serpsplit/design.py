"""Stratified, spend-matched randomization of clusters into two arms."""

from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from serpsplit.ingest import BipartiteGraph
from serpsplit.io import atomic_write_json, atomic_write_text
from serpsplit.partition._graph import exact_int_weights
from serpsplit.partition.result import Partition
from serpsplit.project import ProductGraph

METRICS = ("impressions", "clicks", "cost", "profit")
DEFAULT_AXES = METRICS
DEFAULT_BINS = 4
CONTROL, TREATMENT = "control", "treatment"


class DesignConfigError(ValueError):
    pass


class NoAcceptablePlanError(RuntimeError):
    """No randomization within ``max_attempts`` met the spend tolerance."""

    def __init__(self, best_gap: float, attempts: int, tolerance: float):
        self.best_gap = best_gap
        self.attempts = attempts
        self.tolerance = tolerance
        super().__init__(
            f"no plan with spend gap <= {tolerance:g} in {attempts} attempts "
            f"(best gap {best_gap:.6g})"
        )


@dataclass(frozen=True)
class ClusterMetrics:
    cluster_id: int
    impressions: float = 0.0
    clicks: float = 0.0
    cost: float = 0.0
    profit: float = 0.0

    def __getitem__(self, name: str) -> float:
        if name not in METRICS:
            raise KeyError(name)
        return getattr(self, name)


def cluster_metrics(bi: BipartiteGraph, partition: Partition) -> list[ClusterMetrics]:
    """Sum per-product metrics of ``bi`` over the clusters of ``partition``."""
    if partition.n_nodes != bi.n_products:
        raise ValueError("partition and bipartite graph disagree on product count")
    a = partition.assignment
    sums = {m: [math.fsum(v) for v in _group(getattr(bi, m), a, partition.k)] for m in METRICS}
    return [ClusterMetrics(c, *(sums[m][c] for m in METRICS)) for c in range(partition.k)]


def _group(values: np.ndarray, labels: np.ndarray, k: int) -> list[list[float]]:
    out: list[list[float]] = [[] for _ in range(k)]
    for v, c in zip(values.tolist(), labels.tolist()):
        out[c].append(v)
    return out


def quantile_bins(values: Sequence[float], bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin values at their ``1/bins, ..., (bins-1)/bins`` quantiles.

    Quantiles use linear interpolation between order statistics. A value equal
    to a boundary falls in the lower bin. Returns ``(bin_index, boundaries)``.
    """
    if bins < 1:
        raise DesignConfigError(f"bins_per_axis must be >= 1, got {bins}")
    x = np.asarray(values, dtype=float)
    if bins == 1 or len(x) == 0:
        return np.zeros(len(x), dtype=np.int64), np.zeros(0)
    edges = np.quantile(x, np.arange(1, bins) / bins)
    return np.searchsorted(edges, x, side="left").astype(np.int64), edges


def stratify(metrics: Sequence[ClusterMetrics], axes: Sequence[str] = DEFAULT_AXES,
             bins_per_axis: int = DEFAULT_BINS, min_stratum_size: int = 2) -> list[tuple[int, ...]]:
    """Stratum label (tuple of per-axis bin indices) for every cluster.

    Strata smaller than ``min_stratum_size`` are folded into the nearest other
    stratum by L1 distance between bin tuples (ties: the larger stratum, then
    the smaller label), smallest strata first.
    """
    if not axes:
        raise DesignConfigError("at least one stratification axis is required")
    unknown = [a for a in axes if a not in METRICS]
    if unknown:
        raise DesignConfigError(f"unknown metric(s) {unknown}; expected a subset of {METRICS}")
    if bins_per_axis < 1:
        raise DesignConfigError(f"bins_per_axis must be >= 1, got {bins_per_axis}")
    cols = [quantile_bins([m[a] for m in metrics], bins_per_axis)[0] for a in axes]
    labels = [tuple(int(c[i]) for c in cols) for i in range(len(metrics))]
    if min_stratum_size > 1:
        labels = _merge_sparse(labels, min_stratum_size)
    return labels


def _merge_sparse(labels: list[tuple[int, ...]], min_size: int) -> list[tuple[int, ...]]:
    members: dict[tuple[int, ...], list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        members[lab].append(i)
    while len(members) > 1:
        small = sorted((len(v), k) for k, v in members.items() if len(v) < min_size)
        if not small:
            break
        _, lab = small[0]
        target = min(
            (k for k in members if k != lab),
            key=lambda k: (sum(abs(a - b) for a, b in zip(k, lab)), -len(members[k]), k),
        )
        members[target].extend(members.pop(lab))
    out = list(labels)
    for lab, idx in members.items():
        for i in idx:
            out[i] = lab
    return out


def stratum_name(label: tuple[int, ...]) -> str:
    return "-".join(str(b) for b in label)


def relative_gap(t: float, c: float) -> float:
    """``|t - c| / (t + c)``, 0 when both totals are 0."""
    s = t + c
    return abs(t - c) / s if s else 0.0


def between_arm_leakage(graph: ProductGraph, assignment: Sequence[int],
                        arm: dict[int, str]) -> float:
    """Share of projected edge weight joining clusters in different arms."""
    a = np.asarray(assignment)
    treated = np.array([arm[c] == TREATMENT for c in range(int(a.max(initial=-1)) + 1)], dtype=bool)
    ints, _ = exact_int_weights(graph.weight)
    total = sum(ints)
    if total == 0:
        return 0.0
    cross = (treated[a[graph.src]] != treated[a[graph.dst]]).tolist()
    # exact integer ratio, rounded once: comparable bit-for-bit with Partition.leakage
    return sum(w for w, x in zip(ints, cross) if x) / total


@dataclass
class AssignmentPlan:
    arm: dict[int, str]
    stratum: dict[int, tuple[int, ...]]
    balance_report: dict[str, float]
    attempts: int
    seed: int
    spend_tolerance: float
    between_arm_leakage: float | None = None
    cluster_leakage: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def spend_gap(self) -> float:
        return self.balance_report["cost"]

    def treated(self) -> list[int]:
        return sorted(c for c, a in self.arm.items() if a == TREATMENT)

    def report(self) -> dict:
        return {
            "gaps": dict(self.balance_report),
            "spend_gap": self.spend_gap,
            "spend_tolerance": self.spend_tolerance,
            "attempts": self.attempts,
            "seed": self.seed,
            "n_clusters": len(self.arm),
            "n_treatment": len(self.treated()),
            "n_strata": len(set(self.stratum.values())),
            "between_arm_leakage": self.between_arm_leakage,
            "cluster_leakage": self.cluster_leakage,
            **self.extra,
        }


def _attempt_rng(seed: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))


def _draw(groups: list[list[int]], rng: np.random.Generator) -> dict[int, str]:
    arm = {}
    for ids in groups:
        perm = rng.permutation(len(ids))
        half = len(ids) // 2
        # the odd cluster out goes to a coin-flipped arm
        n_treat = half + (int(rng.integers(2)) if len(ids) % 2 else 0)
        for rank, i in enumerate(perm.tolist()):
            arm[ids[i]] = TREATMENT if rank < n_treat else CONTROL
    return arm


def assign(metrics: Sequence[ClusterMetrics], strata: Sequence[tuple[int, ...]],
           spend_tolerance: float = 0.01, max_attempts: int = 1000, seed: int = 0,
           graph: ProductGraph | None = None, partition: Partition | None = None) -> AssignmentPlan:
    """Randomize clusters to arms within strata, re-drawing until spend matches.

    Each attempt splits every stratum in half at random (arm counts differ
    by at most one) using a generator derived from ``(seed, attempt)``. The
    first attempt whose relative cost gap ``|T - C| / (T + C)`` is within
    ``spend_tolerance`` is returned. When ``graph`` and ``partition`` are
    given, the plan also reports the share of edge weight crossing arms.

    Raises
    ------
    NoAcceptablePlanError
        Carrying the best gap seen, when no attempt is accepted.
    """
    if len(metrics) < 2:
        raise DesignConfigError("need at least two clusters to randomize")
    if len(strata) != len(metrics):
        raise DesignConfigError("one stratum label per cluster is required")
    if max_attempts < 1:
        raise DesignConfigError("max_attempts must be >= 1")
    by_id = {m.cluster_id: m for m in metrics}
    if len(by_id) != len(metrics):
        raise DesignConfigError("duplicate cluster ids")
    label_of = {m.cluster_id: s for m, s in zip(metrics, strata)}
    groups_d: dict[tuple[int, ...], list[int]] = defaultdict(list)
    for cid in sorted(label_of):
        groups_d[label_of[cid]].append(cid)
    groups = [groups_d[s] for s in sorted(groups_d)]

    best_gap = math.inf
    for attempt in range(1, max_attempts + 1):
        arm = _draw(groups, _attempt_rng(seed, attempt - 1))
        t = math.fsum(by_id[c].cost for c, a in arm.items() if a == TREATMENT)
        c = math.fsum(by_id[c].cost for c, a in arm.items() if a == CONTROL)
        gap = relative_gap(t, c)
        best_gap = min(best_gap, gap)
        if gap <= spend_tolerance:
            break
    else:
        raise NoAcceptablePlanError(best_gap, max_attempts, spend_tolerance)

    report = {}
    for m in METRICS:
        t = math.fsum(by_id[c][m] for c, a in arm.items() if a == TREATMENT)
        cc = math.fsum(by_id[c][m] for c, a in arm.items() if a == CONTROL)
        report[m] = relative_gap(t, cc)
    plan = AssignmentPlan(arm=dict(sorted(arm.items())), stratum=dict(sorted(label_of.items())),
                          balance_report=report, attempts=attempt, seed=seed,
                          spend_tolerance=spend_tolerance)
    if graph is not None and partition is not None:
        plan.between_arm_leakage = between_arm_leakage(graph, partition.assignment, plan.arm)
        plan.cluster_leakage = partition.leakage
    return plan


def save_plan(plan: AssignmentPlan, path: str | os.PathLike) -> None:
    """CSV ``cluster_id,stratum,arm`` sorted by cluster id."""
    lines = ["cluster_id,stratum,arm"]
    lines += [f"{c},{stratum_name(plan.stratum[c])},{plan.arm[c]}" for c in sorted(plan.arm)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_balance_report(plan: AssignmentPlan, path: str | os.PathLike) -> None:
    atomic_write_json(path, plan.report())


def load_plan(path: str | os.PathLike) -> dict[int, str]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        return {int(r["cluster_id"]): r["arm"] for r in csv.DictReader(fh)}


def load_balance_report(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
