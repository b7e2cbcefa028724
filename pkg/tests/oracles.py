"""Independent reference implementations and graph generators used by the tests.

Nothing here calls the code under test except for constructors of its data
types; every oracle recomputes its answer from first principles.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from serpsplit.ingest import BipartiteGraph
from serpsplit.project import ProductGraph


# --- generators -----------------------------------------------------------


def random_bipartite(rng: np.random.Generator, max_queries: int = 50, max_products: int = 30,
                     density: float | None = None) -> BipartiteGraph:
    nq = int(rng.integers(1, max_queries + 1))
    npd = int(rng.integers(2, max_products + 1))
    p = rng.uniform(0.05, 0.5) if density is None else density
    w = np.where(rng.random((nq, npd)) < p, rng.integers(1, 50, (nq, npd)), 0)
    w[0, 0] = max(w[0, 0], 1)  # never empty
    edges = [(q, j, int(w[q, j])) for q in range(nq) for j in range(npd) if w[q, j] > 0]
    return BipartiteGraph.from_edges([f"q{i:03d}" for i in range(nq)],
                                     [f"p{j:03d}" for j in range(npd)], edges)


def dense_bipartite(bi: BipartiteGraph) -> list[list[int]]:
    m = [[0] * bi.n_products for _ in range(bi.n_queries)]
    for q, p, w in bi.edges():
        m[q][p] = int(w)
    return m


def planted_graph(seed: int, communities: int = 8, size: int = 25, p_in: float = 0.3,
                  p_out: float = 0.01, w_in: float = 1.0, w_out: float = 0.1):
    """Planted-partition product graph and its ground-truth labels."""
    rng = np.random.default_rng(seed)
    n = communities * size
    labels = np.repeat(np.arange(communities), size)
    iu, ju = np.triu_indices(n, 1)
    same = labels[iu] == labels[ju]
    keep = rng.random(len(iu)) < np.where(same, p_in, p_out)
    w = np.where(same, w_in, w_out)[keep]
    return ProductGraph.from_arrays(n, iu[keep], ju[keep], w), labels


def two_triangles(bridge: float = 0.1) -> ProductGraph:
    """Triangles {0,1,2} and {3,4,5} (unit weights) joined by edge 2-3."""
    edges = [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0), (3, 4, 1.0), (3, 5, 1.0), (4, 5, 1.0),
             (2, 3, bridge)]
    return ProductGraph.from_edges(6, edges)


def random_graph(n_edges: int, seed: int, avg_degree: int = 10) -> ProductGraph:
    """Uniform random graph with about ``n_edges`` edges and weights in (0, 1]."""
    rng = np.random.default_rng(seed)
    n = max(2, 2 * n_edges // avg_degree)
    a = rng.integers(0, n, int(n_edges * 1.02) + 10)
    b = rng.integers(0, n, len(a))
    keep = a != b
    a, b = a[keep], b[keep]
    w = rng.integers(1, 11, len(a)) / 10.0
    return ProductGraph.from_arrays(n, a, b, w)


# --- oracles --------------------------------------------------------------


def projection_bruteforce(bi: BipartiteGraph, hub_cap: int | None = None) -> dict[tuple[int, int], float]:
    """Triple loop over queries and ordered product pairs."""
    m = dense_bipartite(bi)
    out: dict[tuple[int, int], float] = {}
    for row in m:
        f = sum(1 for x in row if x > 0)
        if f < 2 or (hub_cap is not None and f > hub_cap):
            continue
        for a in range(len(row)):
            for b in range(a + 1, len(row)):
                if row[a] > 0 and row[b] > 0:
                    term = (1.0 / math.log(f)) * min(row[a], row[b]) / max(row[a], row[b])
                    out[(a, b)] = out.get((a, b), 0.0) + term
    return out


def clustering_bruteforce(n: int, edges) -> float:
    adj = [[False] * n for _ in range(n)]
    for a, b in edges:
        adj[a][b] = adj[b][a] = True
    closed = triples = 0
    for v in range(n):
        for u in range(n):
            for w in range(n):
                if u != w and u != v and w != v and adj[v][u] and adj[v][w]:
                    triples += 1
                    closed += adj[u][w]
    return closed / triples if triples else 0.0


def cut_bruteforce(g: ProductGraph, labels) -> float:
    return math.fsum(w for (a, b), w in g.as_dict().items() if labels[a] != labels[b])


def best_bisection(g: ProductGraph) -> float:
    """Minimum cut over every split of the nodes into two equal halves."""
    n = g.n_nodes
    best = math.inf
    for side in itertools.product((0, 1), repeat=n):
        if sum(side) * 2 != n:
            continue
        best = min(best, cut_bruteforce(g, side))
    return best


def quantile_sort_oracle(values, bins: int) -> list[float]:
    """Linear-interpolation quantile boundaries from the sorted sample."""
    x = sorted(float(v) for v in values)
    n = len(x)
    out = []
    for j in range(1, bins):
        h = (n - 1) * j / bins
        lo = math.floor(h)
        hi = min(lo + 1, n - 1)
        out.append(x[lo] + (h - lo) * (x[hi] - x[lo]))
    return out


def did_closed_form(panel) -> float:
    def mean(arm, period):
        vals = [o.outcome for o in panel if o.arm == arm and o.period == period]
        return math.fsum(vals) / len(vals)

    return ((mean("treatment", "post") - mean("treatment", "pre"))
            - (mean("control", "post") - mean("control", "pre")))


def sandwich_se(panel) -> tuple[np.ndarray, float]:
    """Interaction coefficient's CR1 standard error from explicit loops.

    Coefficients come from a least-squares solve, the meat is summed cluster
    by cluster, and the small-sample factor is G/(G-1) * (N-1)/(N-p).
    """
    rows, y, groups = [], [], []
    for o in panel:
        t = 1.0 if o.arm == "treatment" else 0.0
        s = 1.0 if o.period == "post" else 0.0
        rows.append([1.0, t, s, t * s])
        y.append(o.outcome)
        groups.append(o.cluster_id)
    X, y = np.array(rows), np.array(y)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    e = y - X @ beta
    xtx_inv = np.linalg.inv(X.T @ X)
    meat = np.zeros((4, 4))
    for g in sorted(set(groups), key=str):
        idx = [i for i, c in enumerate(groups) if c == g]
        s = X[idx].T @ e[idx]
        meat += np.outer(s, s)
    n, p, G = len(y), 4, len(set(groups))
    v = G / (G - 1) * (n - 1) / (n - p) * xtx_inv @ meat @ xtx_inv
    return beta, float(np.sqrt(v[3, 3]))


def random_panel(rng: np.random.Generator, clusters: int | None = None, balanced: bool = True):
    from serpsplit.infer import PanelObservation

    G = int(rng.integers(4, 60)) if clusters is None else clusters
    treated = rng.permutation(G) < G // 2
    out = []
    for c in range(G):
        arm = "treatment" if treated[c] else "control"
        base = rng.normal(10, 3)
        for period in ("pre", "post"):
            reps = 1 if balanced else int(rng.integers(1, 4))
            for r in range(reps):
                y = base + rng.normal(0, 1) + (1.5 if period == "post" else 0) + (
                    0.7 if (period == "post" and treated[c]) else 0)
                out.append(PanelObservation(f"c{c}", period, arm, float(y),
                                            unit=None if balanced else f"u{r}"))
    return out
