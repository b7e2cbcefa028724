"""Difference-in-differences with cluster-robust inference, and power simulation.

The estimating equation is the saturated two-period model

    y = b0 + b1 * treatment + b2 * post + b3 * treatment * post + e

on cluster-level (or finer, grouped by cluster) observations. ``b3`` is the
DID effect. Its variance uses the cluster sandwich

    V = c * (X'WX)^-1 [sum_g X_g' W_g u_g u_g' W_g X_g] (X'WX)^-1,
    c = G/(G-1) * (N-1)/(N-p)

and inference is on a t distribution with ``G - 1`` degrees of freedom.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

PRE, POST = "pre", "post"
CONTROL, TREATMENT = "control", "treatment"
_PERIODS = {"pre": PRE, "0": PRE, "post": POST, "1": POST}
_ARMS = {"control": CONTROL, "c": CONTROL, "0": CONTROL,
         "treatment": TREATMENT, "t": TREATMENT, "1": TREATMENT}


class PanelError(ValueError):
    pass


class InsufficientClustersError(PanelError):
    pass


@dataclass(frozen=True)
class PanelObservation:
    cluster_id: str | int
    period: str
    arm: str
    outcome: float
    weight: float = 1.0
    unit: str | int | None = None


@dataclass
class DIDResult:
    effect: float
    se_cluster_robust: float
    t_stat: float
    df: int
    p_value: float
    coefficients: dict[str, float]
    n_clusters: int
    n_obs: int
    degenerate: bool = False
    cell_means: dict[str, float] = field(default_factory=dict)
    vcov: np.ndarray | None = field(default=None, repr=False)

    @property
    def relative_lift(self) -> float:
        """Effect over the treated arm's counterfactual post-period mean."""
        c = self.coefficients
        base = c["intercept"] + c["arm"] + c["period"]
        return self.effect / base if base else math.nan

    def to_dict(self) -> dict:
        return {
            "effect": self.effect,
            "se": self.se_cluster_robust,
            "t": self.t_stat,
            "df": self.df,
            "p": self.p_value,
            "n_clusters": self.n_clusters,
            "n_obs": self.n_obs,
            "degenerate": self.degenerate,
            "coefficients": dict(self.coefficients),
            "cell_means": dict(self.cell_means),
            "relative_lift": self.relative_lift,
        }


def _norm_period(p) -> str:
    try:
        return _PERIODS[str(p).strip().lower()]
    except KeyError:
        raise PanelError(f"unknown period {p!r}; expected pre/post") from None


def _norm_arm(a) -> str:
    try:
        return _ARMS[str(a).strip().lower()]
    except KeyError:
        raise PanelError(f"unknown arm {a!r}; expected control/treatment") from None


def _validate(panel: Sequence[PanelObservation]):
    seen = set()
    arm_of: dict = {}
    for ob in panel:
        period, arm = _norm_period(ob.period), _norm_arm(ob.arm)
        key = (ob.cluster_id, ob.unit, period)
        if key in seen:
            raise PanelError(f"duplicate observation for cluster {ob.cluster_id!r}, period {period}")
        seen.add(key)
        if arm_of.setdefault(ob.cluster_id, arm) != arm:
            raise PanelError(f"cluster {ob.cluster_id!r} appears in both arms")
        if not (ob.weight > 0 and math.isfinite(ob.weight)):
            raise PanelError(f"weight must be positive, got {ob.weight!r}")
        if not math.isfinite(ob.outcome):
            raise PanelError(f"non-finite outcome for cluster {ob.cluster_id!r}")
    return arm_of


def did_estimate(panel: Sequence[PanelObservation]) -> DIDResult:
    """Two-period DID with CR1 cluster-robust standard error.

    Coefficients are the (weighted) cell-mean contrasts, which is what OLS
    returns for the saturated model; the effect is therefore exactly
    ``(T_post - T_pre) - (C_post - C_pre)``.

    Raises
    ------
    PanelError
        On an empty arm/period cell (named in the message) or malformed input.
    InsufficientClustersError
        If either arm has fewer than two clusters.
    """
    panel = list(panel)
    if not panel:
        raise PanelError("empty panel")
    arm_of = _validate(panel)

    arm = np.array([_norm_arm(o.arm) == TREATMENT for o in panel], dtype=float)
    post = np.array([_norm_period(o.period) == POST for o in panel], dtype=float)
    y = np.array([o.outcome for o in panel], dtype=float)
    w = np.array([o.weight for o in panel], dtype=float)

    cells = {}
    for a_name, a_val in ((CONTROL, 0.0), (TREATMENT, 1.0)):
        for p_name, p_val in ((PRE, 0.0), (POST, 1.0)):
            mask = (arm == a_val) & (post == p_val)
            if not mask.any():
                raise PanelError(f"singular design: empty cell {a_name}/{p_name}")
            # correctly rounded sums: the cell mean does not depend on row order
            cells[f"{a_name}_{p_name}"] = (math.fsum((w[mask] * y[mask]).tolist())
                                           / math.fsum(w[mask].tolist()))

    n_ctrl = sum(1 for a in arm_of.values() if a == CONTROL)
    n_trt = len(arm_of) - n_ctrl
    if min(n_ctrl, n_trt) < 2:
        raise InsufficientClustersError(
            f"insufficient clusters for CRVE (control={n_ctrl}, treatment={n_trt}; need >= 2 each)")

    c_pre, c_post = cells["control_pre"], cells["control_post"]
    t_pre, t_post = cells["treatment_pre"], cells["treatment_post"]
    effect = (t_post - t_pre) - (c_post - c_pre)
    beta = np.array([c_pre, t_pre - c_pre, c_post - c_pre, effect])

    X = np.column_stack([np.ones_like(y), arm, post, arm * post])
    resid = y - X @ beta
    bread = np.linalg.inv(X.T @ (X * w[:, None]))
    ids = [o.cluster_id for o in panel]
    index = {c: i for i, c in enumerate(dict.fromkeys(ids))}
    g_idx = np.array([index[c] for c in ids])
    G = len(index)
    scores = np.zeros((G, X.shape[1]))
    np.add.at(scores, g_idx, X * (w * resid)[:, None])
    meat = scores.T @ scores
    n, p = X.shape
    factor = G / (G - 1) * (n - 1) / (n - p) if n > p else math.nan
    vcov = factor * bread @ meat @ bread
    se = math.sqrt(max(vcov[3, 3], 0.0))

    scale = max(float(np.max(np.abs(y))), 1.0)
    degenerate = not (se > 1e-9 * scale)
    df = G - 1
    if degenerate:
        se, t_stat, p_value = 0.0, math.nan, math.nan
    else:
        t_stat = effect / se
        p_value = float(min(1.0, 2.0 * stats.t.sf(abs(t_stat), df)))
    return DIDResult(
        effect=float(effect), se_cluster_robust=float(se), t_stat=float(t_stat), df=df,
        p_value=p_value,
        coefficients={"intercept": float(beta[0]), "arm": float(beta[1]),
                      "period": float(beta[2]), "interaction": float(beta[3])},
        n_clusters=G, n_obs=n, degenerate=degenerate, cell_means=cells, vcov=vcov,
    )


def read_panel(path: str | os.PathLike) -> list[PanelObservation]:
    """Read CSV ``cluster_id,period,arm,outcome[,weight][,unit]``; ids stay strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"cluster_id", "period", "arm", "outcome"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise PanelError(f"panel file lacks column(s): {sorted(missing)}")
        out = []
        for line, r in enumerate(reader, start=2):
            try:
                out.append(PanelObservation(
                    cluster_id=r["cluster_id"], period=_norm_period(r["period"]), arm=_norm_arm(r["arm"]),
                    outcome=float(r["outcome"]),
                    weight=float(r["weight"]) if r.get("weight") not in (None, "") else 1.0,
                    unit=r.get("unit") or None,
                ))
            except ValueError as exc:
                raise PanelError(f"line {line}: {exc}") from None
    return out


def write_panel(panel: Iterable[PanelObservation], path: str | os.PathLike) -> None:
    from serpsplit.io import atomic_write_text

    panel = list(panel)
    extra = any(o.weight != 1.0 or o.unit is not None for o in panel)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster_id", "period", "arm", "outcome"] + (["weight", "unit"] if extra else []))
    for o in panel:
        row = [o.cluster_id, o.period, o.arm, repr(float(o.outcome))]
        if extra:
            row += [repr(float(o.weight)), "" if o.unit is None else o.unit]
        w.writerow(row)
    atomic_write_text(path, buf.getvalue())


# --- power analysis -------------------------------------------------------


@dataclass
class PowerResult:
    power: float
    ci_low: float
    ci_high: float
    rejections: int
    n_sims: int
    alpha: float
    effect_size: float
    n_clusters: int
    mode: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + confidence / 2)
    phat = successes / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return float(lo), float(hi)


def cluster_template(panel: Sequence[PanelObservation]) -> np.ndarray:
    """``(G, 2)`` array of per-cluster (pre, post) mean outcomes; arms are ignored."""
    acc: dict = {}
    for o in panel:
        d = acc.setdefault(o.cluster_id, {PRE: [], POST: []})
        d[_norm_period(o.period)].append(o.outcome)
    rows = [(np.mean(d[PRE]), np.mean(d[POST])) for d in acc.values() if d[PRE] and d[POST]]
    return np.array(rows, dtype=float).reshape(-1, 2)


def _sim_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def simulate_once(template: np.ndarray, effect_size: float, rng: np.random.Generator,
                  n_clusters: int, mode: str = "resample") -> DIDResult:
    """Draw one synthetic experiment from ``template`` and estimate it."""
    if mode == "resample":
        draw = template[rng.integers(0, len(template), n_clusters)]
    elif mode == "parametric":
        pre_mu, pre_sd = template[:, 0].mean(), template[:, 0].std(ddof=1)
        diff = template[:, 1] - template[:, 0]
        pre = rng.normal(pre_mu, pre_sd, n_clusters)
        draw = np.column_stack([pre, pre + rng.normal(diff.mean(), diff.std(ddof=1), n_clusters)])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    treated = np.zeros(n_clusters, dtype=bool)
    treated[rng.permutation(n_clusters)[: n_clusters // 2]] = True
    panel = []
    for g in range(n_clusters):
        a = TREATMENT if treated[g] else CONTROL
        post = draw[g, 1] * (1.0 + effect_size) if treated[g] else draw[g, 1]
        panel.append(PanelObservation(g, PRE, a, float(draw[g, 0])))
        panel.append(PanelObservation(g, POST, a, float(post)))
    return did_estimate(panel)


def power_simulation(template: Sequence[PanelObservation] | np.ndarray, effect_size: float,
                     n_sims: int = 1000, alpha: float = 0.05, seed: int = 0,
                     n_clusters: int | None = None, mode: str = "resample",
                     confidence: float = 0.95) -> PowerResult:
    """Monte-Carlo power of the cluster DID test.

    Every simulation draws ``n_clusters`` cluster (pre, post) outcome pairs
    from ``template`` (bootstrap resampling, or normal draws matched to its
    moments when ``mode="parametric"``), randomizes half of them to
    treatment, multiplies treated post-period outcomes by ``1 + effect_size``
    and tests the DID effect at level ``alpha``. Simulation ``i`` uses a
    generator derived from ``(seed, i)``.

    Returns
    -------
    PowerResult
        Rejection rate with a Wilson interval at ``confidence``.
    """
    if n_sims < 100:
        raise ValueError("n_sims must be >= 100")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    tmpl = template if isinstance(template, np.ndarray) else cluster_template(template)
    if len(tmpl) < 4:
        raise ValueError(f"template needs at least 4 clusters, got {len(tmpl)}")
    G = len(tmpl) if n_clusters is None else int(n_clusters)
    if G < 4:
        raise ValueError("n_clusters must be >= 4")
    rejections = 0
    for i in range(n_sims):
        res = simulate_once(tmpl, effect_size, _sim_rng(seed, i), G, mode)
        if res.degenerate:
            rejections += int(abs(res.effect) > 1e-9 * max(1.0, float(np.abs(tmpl).max())))
        else:
            rejections += int(res.p_value < alpha)
    lo, hi = wilson_interval(rejections, n_sims, confidence)
    return PowerResult(rejections / n_sims, lo, hi, rejections, n_sims, alpha, effect_size, G, mode)
