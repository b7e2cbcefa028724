import math

import numpy as np
import pytest
import statsmodels.api as sm
from scipy import stats

from oracles import did_closed_form, random_panel, sandwich_se
from serpsplit.infer import (
    InsufficientClustersError,
    PanelError,
    PanelObservation,
    cluster_template,
    did_estimate,
    power_simulation,
    read_panel,
    wilson_interval,
    write_panel,
)


def cells(c_pre, c_post, t_pre, t_post, per_arm=2):
    out = []
    for i in range(per_arm):
        out += [PanelObservation(f"c{i}", "pre", "control", c_pre),
                PanelObservation(f"c{i}", "post", "control", c_post),
                PanelObservation(f"t{i}", "pre", "treatment", t_pre),
                PanelObservation(f"t{i}", "post", "treatment", t_post)]
    return out


class TestDID:
    def test_closed_form_example(self):
        res = did_estimate(cells(10, 12, 11, 16))
        assert res.effect == 3.0
        assert res.coefficients == {"intercept": 10.0, "arm": 1.0, "period": 2.0, "interaction": 3.0}

    def test_zero_variance_is_degenerate(self):
        res = did_estimate(cells(10, 12, 11, 16, per_arm=3))
        assert res.degenerate and res.se_cluster_robust == 0.0
        assert math.isnan(res.t_stat) and math.isnan(res.p_value)

    def test_matches_sandwich_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            panel = random_panel(rng)
            res = did_estimate(panel)
            beta, se = sandwich_se(panel)
            assert res.effect == did_closed_form(panel)
            assert np.allclose([res.coefficients[k] for k in ("intercept", "arm", "period", "interaction")],
                               beta, rtol=0, atol=1e-10)
            assert abs(res.se_cluster_robust - se) <= 1e-10
            assert res.df == res.n_clusters - 1
            assert res.t_stat == res.effect / res.se_cluster_robust
            assert res.p_value == pytest.approx(2 * stats.t.sf(abs(res.t_stat), res.df), abs=1e-14)

    def test_matches_statsmodels(self):
        rng = np.random.default_rng(1)
        for balanced in (True, False):
            for _ in range(10):
                panel = random_panel(rng, balanced=balanced)
                res = did_estimate(panel)
                t = np.array([o.arm == "treatment" for o in panel], float)
                s = np.array([o.period == "post" for o in panel], float)
                X = np.column_stack([np.ones_like(t), t, s, t * s])
                y = np.array([o.outcome for o in panel])
                groups = np.unique([o.cluster_id for o in panel], return_inverse=True)[1]
                fit = sm.OLS(y, X).fit(cov_type="cluster", cov_kwds={"groups": groups})
                assert abs(fit.params[3] - res.effect) <= 1e-10
                assert abs(fit.bse[3] - res.se_cluster_robust) <= 1e-10

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(2)
        panel = random_panel(rng, 30)
        res = did_estimate(panel)
        names = {f"c{i}": f"z{(i * 7) % 30}" for i in range(30)}
        shuffled = [PanelObservation(names[o.cluster_id], o.period, o.arm, o.outcome)
                    for o in reversed(panel)]
        res2 = did_estimate(shuffled)
        assert abs(res2.se_cluster_robust - res.se_cluster_robust) <= 1e-12
        assert abs(res2.effect - res.effect) <= 1e-12

    def test_scale_equivariance(self):
        rng = np.random.default_rng(3)
        panel = random_panel(rng, 25)
        a = did_estimate(panel)
        b = did_estimate([PanelObservation(o.cluster_id, o.period, o.arm, 2 * o.outcome) for o in panel])
        assert b.effect == 2 * a.effect
        assert b.se_cluster_robust == pytest.approx(2 * a.se_cluster_robust, rel=1e-12)
        assert b.t_stat == pytest.approx(a.t_stat, rel=1e-12)
        assert b.p_value == pytest.approx(a.p_value, rel=1e-9)

    def test_empty_cell(self):
        panel = [o for o in cells(1, 2, 3, 4) if not (o.arm == "treatment" and o.period == "post")]
        with pytest.raises(PanelError, match="empty cell treatment/post"):
            did_estimate(panel)

    def test_one_cluster_per_arm(self):
        with pytest.raises(InsufficientClustersError, match="insufficient clusters for CRVE"):
            did_estimate(cells(1, 2, 3, 5, per_arm=1))

    def test_validation(self):
        base = cells(1, 2, 3, 4)
        with pytest.raises(PanelError, match="both arms"):
            did_estimate(base + [PanelObservation("c0", "post", "treatment", 1.0, unit="x")])
        with pytest.raises(PanelError, match="duplicate"):
            did_estimate(base + [base[0]])
        with pytest.raises(PanelError):
            did_estimate(base + [PanelObservation("n", "during", "control", 1.0)])
        with pytest.raises(PanelError):
            did_estimate([])

    def test_relative_lift(self):
        res = did_estimate(cells(10, 12, 11, 16))
        # counterfactual treated post mean: 11 + 2 = 13
        assert res.relative_lift == 3 / 13


class TestPanelIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        panel = random_panel(rng, 8)
        write_panel(panel, tmp_path / "p.csv")
        assert (tmp_path / "p.csv").read_text().splitlines()[0] == "cluster_id,period,arm,outcome"
        assert read_panel(tmp_path / "p.csv") == panel

    def test_roundtrip_with_units(self, tmp_path):
        rng = np.random.default_rng(5)
        panel = [PanelObservation(o.cluster_id, o.period, o.arm, o.outcome, 2.0, o.unit)
                 for o in random_panel(rng, 6, balanced=False)]
        write_panel(panel, tmp_path / "p.csv")
        assert read_panel(tmp_path / "p.csv") == panel

    def test_missing_column(self, tmp_path):
        (tmp_path / "p.csv").write_text("cluster_id,period,outcome\n1,pre,2\n")
        with pytest.raises(PanelError):
            read_panel(tmp_path / "p.csv")


class TestPower:
    def template(self, G=20, seed=0):
        rng = np.random.default_rng(seed)
        base = rng.lognormal(3, 0.5, G)
        return np.column_stack([base * rng.lognormal(0, 0.1, G), base * rng.lognormal(0.02, 0.1, G)])

    def test_wilson(self):
        lo, hi = wilson_interval(50, 1000)
        assert isinstance(lo, float) and isinstance(hi, float)
        assert lo == pytest.approx(0.03813, abs=1e-5) and hi == pytest.approx(0.06531, abs=1e-5)
        assert wilson_interval(0, 10)[0] == 0.0 and wilson_interval(10, 10)[1] == 1.0

    def test_size_calibration(self):
        res = power_simulation(self.template(30), 0.0, n_sims=1000, seed=1)
        assert res.ci_low <= 0.05 <= res.ci_high

    def test_large_effect_power_one(self):
        res = power_simulation(self.template(), 5.0, n_sims=200, seed=2)
        assert res.power == 1.0

    def test_power_monotone_in_clusters(self):
        tmpl = self.template(40, seed=3)
        powers = [power_simulation(tmpl, 0.08, n_sims=300, seed=4, n_clusters=g).power for g in (8, 20, 40)]
        assert powers == sorted(powers)

    def test_deterministic(self):
        tmpl = self.template()
        a = power_simulation(tmpl, 0.05, n_sims=150, seed=9)
        b = power_simulation(tmpl, 0.05, n_sims=150, seed=9)
        assert a == b

    def test_parametric_mode(self):
        res = power_simulation(self.template(), 0.0, n_sims=400, seed=5, mode="parametric")
        assert 0.0 <= res.power <= 0.15 and res.mode == "parametric"

    def test_from_panel(self):
        rng = np.random.default_rng(6)
        panel = random_panel(rng, 12)
        assert cluster_template(panel).shape == (12, 2)
        res = power_simulation(panel, 0.1, n_sims=100, seed=0)
        assert res.n_clusters == 12

    def test_errors(self):
        with pytest.raises(ValueError):
            power_simulation(self.template(), 0.1, n_sims=99)
        with pytest.raises(ValueError):
            power_simulation(self.template(), 0.1, alpha=1.0)
        with pytest.raises(ValueError):
            power_simulation(self.template(3), 0.1)
        with pytest.raises(ValueError):
            power_simulation(self.template(), 0.1, mode="bootstrap")
