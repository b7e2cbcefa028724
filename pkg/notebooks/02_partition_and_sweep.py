# %% [markdown]
# # Balanced clusters and the leakage curve
#
# Clusters are the unit of randomization. A good clustering keeps most of the
# interference weight inside clusters; the share that crosses clusters is the
# leakage. More clusters give more statistical power but more leakage, and the
# elbow of the curve is a reasonable trade-off.

# %%
import numpy as np

from serpsplit.partition import leakage_sweep, partition_kway
from serpsplit.project import ProductGraph

rng = np.random.default_rng(0)
communities, size = 8, 25
labels = np.repeat(np.arange(communities), size)
iu, ju = np.triu_indices(communities * size, 1)
same = labels[iu] == labels[ju]
keep = rng.random(len(iu)) < np.where(same, 0.3, 0.01)
g = ProductGraph.from_arrays(communities * size, iu[keep], ju[keep], np.where(same, 1.0, 0.1)[keep])
print(g.n_nodes, "products,", g.n_edges, "links")

# %% [markdown]
# Partition into the planted number of clusters. Cluster weights stay within
# 5% of the average.

# %%
part = partition_kway(g, 8, epsilon=0.05, seed=1)
print("sizes:", part.cluster_sizes.tolist())
print(f"edgecut {part.edgecut:.2f} of {part.total_weight:.2f}, leakage {part.leakage:.3f}")
agree = max(np.mean(part.assignment[labels == c] == np.bincount(part.assignment[labels == c]).argmax())
            for c in range(communities))
print("largest per-community agreement:", agree)

# %% [markdown]
# Sweep k and let the elbow pick one.

# %%
curve = leakage_sweep(g, [2, 4, 8, 16, 32, 64], seed=1)
for point in curve.points:
    print(f"k={point.k:>3}  leakage={point.leakage:.3f}")
print("chosen k:", curve.chosen_k, f"({curve.method})")
