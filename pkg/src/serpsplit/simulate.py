"""Synthetic marketplaces with planted interference, and the design meta-experiment.

A market has ``n_communities`` groups of products; each group's queries
mostly expose that group's products. Outcomes follow a potential-outcome
model in which a product's result shrinks with the impression-weighted share
of *treated* competitors it meets on its queries:

    y(p) = baseline(p) * (1 + lift * t(p)) * (1 - gamma * share(p))

Splitting products independently (Bernoulli) puts treated and control
products into the same auctions, so the measured contrast misses the
spillover penalty that a full rollout would incur. Randomizing whole
clusters of co-exposed products keeps most competitors in the same arm.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sp
from scipy import stats

from serpsplit.design import (
    NoAcceptablePlanError,
    TREATMENT,
    assign,
    cluster_metrics,
    stratify,
)
from serpsplit.infer import CONTROL, POST, PRE, PanelObservation, did_estimate
from serpsplit.ingest import BipartiteGraph
from serpsplit.partition import partition_kway
from serpsplit.project import project

BERNOULLI = "bernoulli_product_split"
CLUSTER = "cluster_split"
DESIGNS = (BERNOULLI, CLUSTER)


class MarketConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MarketConfig:
    n_communities: int = 8
    products_per_community: int = 20
    queries_per_community: int = 40
    p_intra: float = 0.15
    p_inter: float = 0.002
    # impressions per link ~ ceil(lognormal(mean, sd)); cross-community links scaled down
    impressions_log_mean: float = 2.0
    impressions_log_sd: float = 1.0
    inter_impression_scale: float = 0.5
    baseline_log_mean: float = 4.0
    baseline_log_sd: float = 0.5
    cpc_log_mean: float = -1.0
    cpc_log_sd: float = 0.3
    true_lift: float = 0.2
    spillover: float = 0.5
    horizon: int = 2
    noise_sd: float = 0.05
    time_trend: float = 0.02
    seed: int = 0
    # cluster design
    k: int | None = None
    epsilon: float = 0.05
    strata_axes: tuple[str, ...] = ("cost",)
    strata_bins: int = 2
    spend_tolerance: float = 0.05
    max_attempts: int = 1000

    def __post_init__(self):
        for name in ("n_communities", "products_per_community", "queries_per_community"):
            if getattr(self, name) < 1:
                raise MarketConfigError(f"{name} must be >= 1")
        for name in ("p_intra", "p_inter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MarketConfigError(f"{name}={v} is not a probability")
        if self.true_lift <= -1:
            raise MarketConfigError("true_lift must exceed -1")
        if self.spillover < 0:
            raise MarketConfigError("spillover must be >= 0")
        if self.horizon < 2 or self.horizon % 2:
            raise MarketConfigError("horizon must be an even number of periods >= 2")
        if self.noise_sd < 0:
            raise MarketConfigError("noise_sd must be >= 0")
        if self.cluster_count < 4:
            # two clusters per arm at least, or the cluster-robust variance is undefined
            raise MarketConfigError(f"the cluster design needs k >= 4, got {self.cluster_count}")

    @property
    def cluster_count(self) -> int:
        return self.k if self.k is not None else self.n_communities

    @classmethod
    def from_mapping(cls, data: dict) -> "MarketConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise MarketConfigError(f"unknown market config key(s): {sorted(unknown)}")
        kwargs = dict(data)
        if "strata_axes" in kwargs:
            axes = kwargs["strata_axes"]
            kwargs["strata_axes"] = tuple(axes.split(",") if isinstance(axes, str) else axes)
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class PotentialOutcomeModel:
    """Outcomes of every product under any treatment vector.

    ``adjacency`` is the query x product impression matrix the competitor
    shares are computed from; ``community`` is the planted group of each
    product.
    """

    baseline: np.ndarray
    true_lift: float
    spillover: float
    adjacency: sp.csr_matrix
    community: np.ndarray

    def treated_competitor_share(self, treated: np.ndarray) -> np.ndarray:
        """Impression-weighted share of treated co-bidders on each product's queries.

        For product ``p`` the competitors are every other product linked to a
        query of ``p``, weighted by their impressions on that query. Products
        without competitors get share 0.
        """
        t = np.asarray(treated, dtype=float)
        b = self.adjacency.astype(np.float64)
        m = b.copy()
        m.data[:] = 1.0
        own = np.asarray(b.sum(axis=0)).ravel()
        num = m.T @ (b @ t) - t * own
        den = m.T @ np.asarray(b.sum(axis=1)).ravel() - own
        share = np.zeros(len(den))
        nz = den > 0
        share[nz] = num[nz] / den[nz]
        return np.clip(share, 0.0, 1.0)

    def outcome(self, treated: np.ndarray) -> np.ndarray:
        t = np.asarray(treated, dtype=float)
        share = self.treated_competitor_share(t)
        return self.baseline * (1.0 + self.true_lift * t) * (1.0 - self.spillover * share)

    def total_effect(self) -> tuple[float, float]:
        """All-treated vs all-control: ``(relative lift, mean difference)``."""
        n = len(self.baseline)
        y1 = self.outcome(np.ones(n))
        y0 = self.outcome(np.zeros(n))
        return float(y1.sum() / y0.sum() - 1.0), float(np.mean(y1 - y0))


def generate_market(cfg: MarketConfig) -> tuple[BipartiteGraph, PotentialOutcomeModel]:
    """Planted-community query/product graph plus its outcome model.

    Deterministic given ``cfg.seed``. Products (and queries) that end up with
    no link are not part of the graph.
    """
    rng = np.random.default_rng(cfg.seed)
    nc, npc, nqc = cfg.n_communities, cfg.products_per_community, cfg.queries_per_community
    n_p, n_q = nc * npc, nc * nqc
    p_comm = np.repeat(np.arange(nc), npc)
    q_comm = np.repeat(np.arange(nc), nqc)
    same = q_comm[:, None] == p_comm[None, :]
    link = rng.random((n_q, n_p)) < np.where(same, cfg.p_intra, cfg.p_inter)
    imps = np.ceil(rng.lognormal(cfg.impressions_log_mean, cfg.impressions_log_sd, (n_q, n_p)))
    imps = np.where(same, imps, np.ceil(imps * cfg.inter_impression_scale))
    imps = np.maximum(imps, 1.0).astype(np.int64)
    baseline_all = rng.lognormal(cfg.baseline_log_mean, cfg.baseline_log_sd, n_p)
    cpc_all = rng.lognormal(cfg.cpc_log_mean, cfg.cpc_log_sd, n_p)

    qi, pi = np.nonzero(link)
    if len(qi) == 0:
        raise MarketConfigError("configuration produced no query/product links")
    keep_p = np.unique(pi)
    keep_q = np.unique(qi)
    p_new = -np.ones(n_p, dtype=np.int64)
    p_new[keep_p] = np.arange(len(keep_p))
    q_new = -np.ones(n_q, dtype=np.int64)
    q_new[keep_q] = np.arange(len(keep_q))
    products = [f"P{p_comm[p]:03d}_{p % npc:04d}" for p in keep_p]
    queries = [f"q{q_comm[q]:03d}_{q % nqc:04d}" for q in keep_q]
    w = imps[qi, pi]
    bi = BipartiteGraph.from_edges(queries, products, zip(q_new[qi].tolist(), p_new[pi].tolist(), w.tolist()))
    impressions = bi.impressions
    cost = impressions * cpc_all[keep_p]
    bi = BipartiteGraph.from_edges(
        queries, products, bi.edges(), impressions=impressions,
        clicks=np.round(impressions * 0.05), cost=cost, profit=baseline_all[keep_p] - cost,
    )
    model = PotentialOutcomeModel(baseline=baseline_all[keep_p].copy(), true_lift=cfg.true_lift,
                                  spillover=cfg.spillover, adjacency=bi.adjacency,
                                  community=p_comm[keep_p].copy())
    return bi, model


# --- meta-experiment ------------------------------------------------------


def _periods(model: PotentialOutcomeModel, treated: np.ndarray, cfg: MarketConfig,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Mean pre- and post-period outcome per product with noise and a common trend."""
    half = cfg.horizon // 2
    n = len(model.baseline)
    y0 = model.outcome(np.zeros(n))
    y1 = model.outcome(treated)
    pre = np.mean([y0 * rng.lognormal(0.0, cfg.noise_sd, n) for _ in range(half)], axis=0)
    post = np.mean([y1 * (1 + cfg.time_trend) * rng.lognormal(0.0, cfg.noise_sd, n)
                    for _ in range(half)], axis=0)
    return pre, post


def _panel(units: np.ndarray, treated_unit: np.ndarray, pre: np.ndarray, post: np.ndarray):
    """Aggregate product outcomes to units (sums) and build a two-period panel."""
    n_units = int(units.max()) + 1
    pre_u = np.bincount(units, weights=pre, minlength=n_units)
    post_u = np.bincount(units, weights=post, minlength=n_units)
    present = np.bincount(units, minlength=n_units) > 0
    panel = []
    for u in np.flatnonzero(present).tolist():
        arm = TREATMENT if treated_unit[u] else CONTROL
        panel.append(PanelObservation(u, PRE, arm, float(pre_u[u])))
        panel.append(PanelObservation(u, POST, arm, float(post_u[u])))
    return panel


@dataclass
class ReplicationResult:
    replication: int
    design: str
    measured_lift: float
    true_lift: float
    bias: float
    n_units: int
    leakage: float = math.nan
    between_arm_leakage: float = math.nan
    spend_gap: float = math.nan


def _bernoulli(model, cfg, rng):
    n = len(model.baseline)
    while True:
        treated = rng.random(n) < 0.5
        if 2 <= treated.sum() <= n - 2:
            break
    return treated, np.arange(n), treated, {}


def _cluster(bi, model, cfg, rng):
    g = project(bi)
    k = min(cfg.cluster_count, g.n_nodes)
    part = partition_kway(g, k, cfg.epsilon, seed=int(rng.integers(2**63)))
    metrics = cluster_metrics(bi, part)
    strata = stratify(metrics, cfg.strata_axes, cfg.strata_bins)
    seed = int(rng.integers(2**63))
    try:
        plan = assign(metrics, strata, cfg.spend_tolerance, cfg.max_attempts, seed, g, part)
    except NoAcceptablePlanError as err:
        plan = assign(metrics, strata, err.best_gap, cfg.max_attempts, seed, g, part)
    treated_cluster = np.array([plan.arm[c] == TREATMENT for c in range(k)])
    treated = treated_cluster[part.assignment]
    extra = {"leakage": part.leakage, "between_arm_leakage": plan.between_arm_leakage,
             "spend_gap": plan.spend_gap}
    return treated, part.assignment, treated_cluster, extra


def run_replication(cfg: MarketConfig, replication: int,
                    designs: tuple[str, ...] = DESIGNS) -> list[ReplicationResult]:
    """Generate one market and measure it under each design.

    The market seed and every design's random stream derive from
    ``(cfg.seed, replication)``, so results do not depend on execution order.
    """
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(replication,))
    market_seed, *design_seeds = ss.generate_state(1 + len(designs), dtype=np.uint64).tolist()
    rcfg = replace(cfg, seed=int(market_seed))
    bi, model = generate_market(rcfg)
    truth, _ = model.total_effect()
    out = []
    for design, dseed in zip(designs, design_seeds):
        rng = np.random.default_rng(int(dseed))
        if design == BERNOULLI:
            treated, units, treated_unit, extra = _bernoulli(model, rcfg, rng)
        elif design == CLUSTER:
            treated, units, treated_unit, extra = _cluster(bi, model, rcfg, rng)
        else:
            raise ValueError(f"unknown design {design!r}")
        pre, post = _periods(model, treated, rcfg, rng)
        res = did_estimate(_panel(np.asarray(units), np.asarray(treated_unit), pre, post))
        lift = res.relative_lift
        out.append(ReplicationResult(replication, design, lift, truth, lift - truth,
                                     res.n_clusters, **extra))
    return out


@dataclass
class DesignSummary:
    design: str
    replications: int
    mean_bias: float
    sd_bias: float
    se_bias: float
    ci_low: float
    ci_high: float
    mean_measured_lift: float
    mean_true_lift: float

    def covers(self, value: float = 0.0) -> bool:
        return self.ci_low <= value <= self.ci_high


@dataclass
class MetaReport:
    config: MarketConfig
    summaries: dict[str, DesignSummary]
    replications: list[ReplicationResult] = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["strata_axes"] = list(cfg["strata_axes"])
        return {"config": cfg, "designs": {d: asdict(s) for d, s in self.summaries.items()}}


def summarize(results: list[ReplicationResult], design: str, confidence: float = 0.95) -> DesignSummary:
    bias = np.array([r.bias for r in results if r.design == design])
    n = len(bias)
    mean = float(bias.mean())
    sd = float(bias.std(ddof=1)) if n > 1 else math.nan
    se = sd / math.sqrt(n) if n > 1 else math.nan
    q = stats.t.ppf(0.5 + confidence / 2, n - 1) if n > 1 else math.nan
    return DesignSummary(
        design, n, mean, sd, se, mean - q * se, mean + q * se,
        float(np.mean([r.measured_lift for r in results if r.design == design])),
        float(np.mean([r.true_lift for r in results if r.design == design])),
    )


def _replication_job(args):
    cfg, r, designs = args
    return run_replication(cfg, r, designs)


def run_meta_experiment(cfg: MarketConfig, designs: tuple[str, ...] = DESIGNS,
                        replications: int = 100, n_jobs: int = 1) -> MetaReport:
    """Compare designs' bias against the all-treated vs all-control effect.

    Each replication draws a fresh market, applies every design to it and
    records ``measured relative lift - true relative lift``. Summaries carry
    the mean bias and a t-based 95% interval over replications.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    jobs = [(cfg, r, tuple(designs)) for r in range(replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            batches = list(ex.map(_replication_job, jobs))
    else:
        batches = [_replication_job(j) for j in jobs]
    results = [r for batch in batches for r in batch]
    return MetaReport(cfg, {d: summarize(results, d) for d in designs}, results)


def load_market_config(path: str | os.PathLike) -> MarketConfig:
    """Read a TOML file, or flat ``key = value`` lines, into a :class:`MarketConfig`.

    A ``[market]`` table is used when present; other tables are ignored.
    """
    from serpsplit.config import load_config

    data = load_config(path)
    if isinstance(data.get("market"), dict):
        data = data["market"]
    data = {k: v for k, v in data.items() if not isinstance(v, dict)}
    return MarketConfig.from_mapping(data)
