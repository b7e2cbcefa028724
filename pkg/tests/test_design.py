import math
from collections import Counter

import numpy as np
import pytest

from oracles import planted_graph, quantile_sort_oracle, random_bipartite
from serpsplit.design import (
    CONTROL,
    TREATMENT,
    ClusterMetrics,
    DesignConfigError,
    NoAcceptablePlanError,
    assign,
    between_arm_leakage,
    cluster_metrics,
    load_balance_report,
    load_plan,
    quantile_bins,
    relative_gap,
    save_balance_report,
    save_plan,
    stratify,
)
from serpsplit.ingest import BipartiteGraph
from serpsplit.partition import partition_kway
from serpsplit.project import project


def metrics_from(values, metric="profit"):
    return [ClusterMetrics(i, **{metric: float(v)}) for i, v in enumerate(values)]


def random_metrics(rng, n):
    return [ClusterMetrics(i, impressions=float(rng.integers(10, 10_000)), clicks=float(rng.integers(0, 500)),
                           cost=float(rng.lognormal(3, 1)), profit=float(rng.normal(100, 40)))
            for i in range(n)]


class TestClusterMetrics:
    def test_sums_member_products(self):
        rng = np.random.default_rng(3)
        base = random_bipartite(rng, 40, 30, density=0.3)
        n = base.n_products
        bi = BipartiteGraph.from_edges(base.queries, base.products, base.edges(),
                                       clicks=rng.integers(0, 9, n), cost=rng.random(n), profit=rng.normal(size=n))
        g = project(bi)
        part = partition_kway(g, 4, seed=0)
        ms = cluster_metrics(bi, part)
        assert [m.cluster_id for m in ms] == list(range(4))
        for m in ms:
            members = [p for p in range(n) if part.assignment[p] == m.cluster_id]
            for name in ("impressions", "clicks", "cost", "profit"):
                assert m[name] == pytest.approx(sum(getattr(bi, name)[p] for p in members), abs=1e-9)
        with pytest.raises(KeyError):
            ms[0]["spend"]


class TestStratify:
    def test_median_split(self):
        labels = stratify(metrics_from([1, 2, 3, 4]), ["profit"], 2, min_stratum_size=1)
        assert labels == [(0,), (0,), (1,), (1,)]

    def test_identical_metrics_single_stratum(self):
        ms = [ClusterMetrics(i, 5, 5, 5, 5) for i in range(7)]
        assert len(set(stratify(ms))) == 1

    def test_ties_go_to_lower_bin(self):
        idx, edges = quantile_bins([1, 1, 1, 1, 5], 2)
        assert edges.tolist() == [1.0] and idx.tolist() == [0, 0, 0, 0, 1]

    def test_sort_oracle_two_axes(self):
        rng = np.random.default_rng(0)
        ms = random_metrics(rng, 10_000)
        labels = stratify(ms, ["cost", "profit"], 4, min_stratum_size=1)
        assert len(set(labels)) <= 16
        for axis, col in (("cost", 0), ("profit", 1)):
            vals = [m[axis] for m in ms]
            edges = quantile_sort_oracle(vals, 4)
            _, got = quantile_bins(vals, 4)
            assert np.allclose(got, edges, rtol=1e-12, atol=0)
            for v, lab in zip(vals, labels):
                assert lab[col] == sum(1 for e in edges if v > e)

    def test_sparse_strata_merged(self):
        rng = np.random.default_rng(1)
        for n in (3, 5, 9, 17, 40):
            ms = random_metrics(rng, n)
            labels = stratify(ms)  # default: four axes, four bins
            counts = Counter(labels)
            assert min(counts.values()) >= 2 or len(counts) == 1

    def test_merge_goes_to_nearest(self):
        # bins on one axis: 0,0,1,1,2,2,3  ->  the lone top-bin cluster joins bin 2
        vals = [1, 2, 3, 4, 5, 6, 100]
        idx, _ = quantile_bins(vals, 4)
        labels = stratify(metrics_from(vals), ["profit"], 4)
        lone = [i for i, c in Counter(idx.tolist()).items() if c == 1]
        for i, v in enumerate(idx.tolist()):
            if v in lone:
                others = {labels[j] for j in range(len(vals)) if idx[j] != v}
                assert labels[i] in others
                assert abs(labels[i][0] - v) == min(abs(o[0] - v) for o in others)

    def test_config_errors(self):
        ms = metrics_from([1, 2])
        with pytest.raises(DesignConfigError):
            stratify(ms, ["profit"], 0)
        with pytest.raises(DesignConfigError):
            stratify(ms, ["spend"], 2)
        with pytest.raises(DesignConfigError):
            stratify(ms, [], 2)


class TestAssign:
    def test_two_identical_clusters(self):
        ms = [ClusterMetrics(0, 1, 1, 10, 1), ClusterMetrics(1, 1, 1, 10, 1)]
        plan = assign(ms, [(0,), (0,)], seed=5)
        assert sorted(plan.arm.values()) == [CONTROL, TREATMENT]
        assert plan.spend_gap == 0.0 and plan.attempts == 1

    def test_hundred_clusters_recomputed_gap(self):
        rng = np.random.default_rng(2)
        ms = random_metrics(rng, 100)
        strata = stratify(ms)
        plan = assign(ms, strata, spend_tolerance=0.01, max_attempts=1000, seed=11)
        t = math.fsum(m.cost for m in ms if plan.arm[m.cluster_id] == TREATMENT)
        c = math.fsum(m.cost for m in ms if plan.arm[m.cluster_id] == CONTROL)
        assert abs(t - c) / (t + c) <= 0.01
        assert plan.balance_report["cost"] == relative_gap(t, c)
        for name in ("impressions", "clicks", "profit"):
            tt = math.fsum(m[name] for m in ms if plan.arm[m.cluster_id] == TREATMENT)
            cc = math.fsum(m[name] for m in ms if plan.arm[m.cluster_id] == CONTROL)
            assert plan.balance_report[name] == relative_gap(tt, cc)

    def test_within_stratum_counts(self):
        rng = np.random.default_rng(3)
        for seed in range(20):
            ms = random_metrics(rng, int(rng.integers(2, 60)))
            strata = stratify(ms, ["cost", "clicks"], 3)
            plan = assign(ms, strata, spend_tolerance=1.0, seed=seed)
            assert set(plan.arm) == {m.cluster_id for m in ms}
            for s in set(strata):
                arms = [plan.arm[m.cluster_id] for m, lab in zip(ms, strata) if lab == s]
                assert abs(arms.count(TREATMENT) - arms.count(CONTROL)) <= 1

    def test_deterministic_and_order_free(self):
        rng = np.random.default_rng(4)
        ms = random_metrics(rng, 30)
        strata = stratify(ms)
        a = assign(ms, strata, 0.05, seed=9)
        b = assign(ms, strata, 0.05, seed=9)
        order = rng.permutation(30)
        c = assign([ms[i] for i in order], [strata[i] for i in order], 0.05, seed=9)
        assert a.arm == b.arm == c.arm and a.attempts == c.attempts

    def test_failure_reports_best_gap(self):
        ms = [ClusterMetrics(0, cost=1.0), ClusterMetrics(1, cost=3.0)]
        with pytest.raises(NoAcceptablePlanError) as info:
            assign(ms, [(0,), (0,)], spend_tolerance=0.1, max_attempts=5)
        assert info.value.best_gap == 0.5 and info.value.attempts == 5

    def test_preconditions(self):
        with pytest.raises(DesignConfigError):
            assign([ClusterMetrics(0)], [(0,)])
        with pytest.raises(DesignConfigError):
            assign(metrics_from([1, 2]), [(0,)])

    def test_between_arm_leakage_subset(self):
        for seed in range(20):
            g, _ = planted_graph(seed, communities=6, size=15)
            part = partition_kway(g, 6, seed=seed)
            ms = [ClusterMetrics(c, cost=float(np.sum(part.assignment == c))) for c in range(6)]
            plan = assign(ms, stratify(ms, ["cost"], 1), 1.0, seed=seed, graph=g, partition=part)
            assert plan.between_arm_leakage <= plan.cluster_leakage == part.leakage
            cross = sum(w for (a, b), w in g.as_dict().items()
                        if plan.arm[part.assignment[a]] != plan.arm[part.assignment[b]])
            assert plan.between_arm_leakage == pytest.approx(cross / g.total_weight, abs=1e-12)
            assert between_arm_leakage(g, part.assignment, plan.arm) == plan.between_arm_leakage


class TestOutputs:
    def test_plan_and_report_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        ms = random_metrics(rng, 12)
        strata = stratify(ms, ["cost"], 2)
        plan = assign(ms, strata, 0.2, seed=1)
        save_plan(plan, tmp_path / "plan.csv")
        save_balance_report(plan, tmp_path / "balance.json")
        lines = (tmp_path / "plan.csv").read_text().splitlines()
        assert lines[0] == "cluster_id,stratum,arm" and len(lines) == 13
        assert load_plan(tmp_path / "plan.csv") == plan.arm
        rep = load_balance_report(tmp_path / "balance.json")
        assert rep["gaps"] == plan.balance_report and rep["attempts"] == plan.attempts
        assert "between_arm_leakage" in rep
