"""Leakage-vs-k sweep and elbow selection of the cluster count."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from serpsplit.io import atomic_write_text
from serpsplit.partition.kway import DEFAULT_EPSILON, partition_kway
from serpsplit.partition.result import Partition
from serpsplit.project import ProductGraph


@dataclass(frozen=True)
class SweepPoint:
    k: int
    leakage: float
    edgecut: float
    runtime_ms: float


@dataclass
class LeakageCurve:
    points: list[SweepPoint]
    chosen_k: int
    method: str
    partitions: dict[int, Partition] = field(default_factory=dict, repr=False)

    @property
    def ks(self) -> list[int]:
        return [p.k for p in self.points]

    @property
    def leakages(self) -> list[float]:
        return [p.leakage for p in self.points]


def elbow_index(x: Sequence[float], y: Sequence[float]) -> int:
    """Index of the point farthest from the chord joining the end points.

    Both axes are min-max normalized first (as in Kneedle) so the answer does
    not depend on units. Points below the chord are preferred: on a rising
    leakage curve those sit before the steep part, while points above it are
    already past the knee. Only when nothing lies below the chord is the
    farthest point on either side taken. Returns 0 when every interior point
    lies on the chord.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        return 0
    xs = (x - x.min()) / (np.ptp(x) or 1.0)
    ys = (y - y.min()) / (np.ptp(y) or 1.0)
    dx, dy = xs[-1] - xs[0], ys[-1] - ys[0]
    norm = np.hypot(dx, dy)
    if norm == 0:
        return 0
    below = (dy * (xs - xs[0]) - dx * (ys - ys[0])) / norm
    if below.max() > 1e-12:
        return int(np.argmax(below))
    dist = np.abs(below)
    if dist.max() <= 1e-12:
        return 0
    return int(np.argmax(dist))


def select_k(ks: Sequence[int], leakages: Sequence[float]) -> tuple[int, str]:
    if len(ks) == 1:
        return int(ks[0]), "degenerate"
    i = elbow_index(ks, leakages)
    return int(ks[i]), "max-distance-to-chord"


def leakage_sweep(g: ProductGraph, ks: Sequence[int], epsilon: float = DEFAULT_EPSILON,
                  seed: int = 0, chosen_k: int | None = None, **kwargs) -> LeakageCurve:
    """Partition ``g`` once per ``k`` and pick the elbow of the leakage curve.

    Every point uses the same ``seed``. ``chosen_k`` overrides the elbow pick
    (it must be one of ``ks``); extra keyword arguments go to
    :func:`partition_kway`.
    """
    ks = [int(k) for k in ks]
    if not ks:
        raise ValueError("ks must be non-empty")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("ks must be strictly ascending")
    points, parts = [], {}
    for k in ks:
        t0 = time.perf_counter()
        part = partition_kway(g, k, epsilon, seed, **kwargs)
        ms = (time.perf_counter() - t0) * 1000.0
        points.append(SweepPoint(k, part.leakage, part.edgecut, ms))
        parts[k] = part
    if chosen_k is not None:
        if chosen_k not in ks:
            raise ValueError(f"chosen_k={chosen_k} is not among the swept ks")
        return LeakageCurve(points, int(chosen_k), "manual", parts)
    k_best, method = select_k(ks, [p.leakage for p in points])
    return LeakageCurve(points, k_best, method, parts)


def save_curve(curve: LeakageCurve, path: str | os.PathLike, timings: bool = True) -> None:
    """CSV ``k,edgecut,leakage,runtime_ms``; ``timings=False`` leaves runtime blank."""
    lines = ["k,edgecut,leakage,runtime_ms"]
    for p in curve.points:
        rt = f"{p.runtime_ms:.3f}" if timings else ""
        lines.append(f"{p.k},{p.edgecut!r},{p.leakage!r},{rt}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_curve(path: str | os.PathLike) -> list[SweepPoint]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        return [SweepPoint(int(r["k"]), float(r["leakage"]), float(r["edgecut"]),
                           float(r["runtime_ms"]) if r["runtime_ms"] else float("nan"))
                for r in csv.DictReader(fh)]
