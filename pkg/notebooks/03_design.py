# %% [markdown]
# # Assigning clusters to arms
#
# Clusters are grouped into strata by quantiles of their totals, randomized
# half and half within each stratum, and redrawn until treated and control
# spend are within a tolerance of each other.

# %%
import numpy as np

from serpsplit.design import ClusterMetrics, assign, stratify

rng = np.random.default_rng(3)
metrics = [ClusterMetrics(i, impressions=float(rng.integers(100, 10_000)),
                          clicks=float(rng.integers(0, 400)), cost=float(rng.lognormal(3, 1)),
                          profit=float(rng.normal(100, 40)))
           for i in range(40)]
strata = stratify(metrics, ["cost", "profit"], bins_per_axis=2)
print("strata sizes:", {s: strata.count(s) for s in sorted(set(strata))})

# %%
plan = assign(metrics, strata, spend_tolerance=0.01, seed=7)
print("attempts:", plan.attempts)
for name, gap in plan.balance_report.items():
    print(f"{name:>12} relative gap {gap:.4f}")
