# %% [markdown]
# # From a query report to a product graph
#
# A search query report lists, per day, which query showed which product ad
# and how many impressions it got. Summing impressions per (query, product)
# pair gives a bipartite graph. Collapsing it onto products links any two
# products that shared a query; the link weight is discounted by how many
# products the query reached and by how unequal their impressions were.

# %%
from serpsplit.cli import toy_report_path
from serpsplit.ingest import build_bipartite, read_report
from serpsplit.project import clustering_coefficient, project

report = read_report(toy_report_path())
print(f"{len(report)} rows, {report.n_malformed} malformed")
for row in report.rows[:3]:
    print(row)

# %% [markdown]
# Queries are whitespace-normalized and lowercased, so "Chopper  Axe" and
# "chopper axe" become one node.

# %%
bi = build_bipartite(report.rows)
print(bi.n_queries, "queries,", bi.n_products, "products,", bi.n_edges, "edges")
for q in range(bi.n_queries):
    prods, imps = bi.neighbors(q)
    print(f"{bi.queries[q]!r:>16}", [(bi.products[p], int(w)) for p, w in zip(prods, imps)])

# %% [markdown]
# The projection: a query reaching `f` products adds `(1/ln f) * min/max` of
# the two impression counts to every pair it links. Queries with a single
# product add nothing.

# %%
g = project(bi)
for (a, b), w in sorted(g.as_dict().items()):
    print(f"{g.products[a]} -- {g.products[b]}: {w:.4f}")
print("clustering coefficient:", round(clustering_coefficient(g), 3))
