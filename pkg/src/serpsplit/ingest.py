"""Query-report parsing and bipartite query/product graph construction.

A query report is a delimited text file with one line per
(search query, product, day, campaign) combination and the impressions and
clicks the search engine attributed to it. Rows are pooled over the whole
input window and collapsed into a simple bipartite graph whose edge weight is
the summed impression count.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_SCHEMA",
    "DISPLAY_SCHEMA",
    "BipartiteGraph",
    "EmptyGraphError",
    "ParsedReport",
    "QueryReportRow",
    "ReportSchemaError",
    "RowError",
    "build_bipartite",
    "detect_schema",
    "format_row",
    "load_bipartite",
    "normalize_query",
    "parse_report",
    "read_report",
    "save_bipartite",
    "write_report",
]

REQUIRED_FIELDS = ("search_query", "impressions", "product", "clicks", "metric_day", "ad_campaign")
OPTIONAL_FIELDS = ("cost", "profit")

# canonical field -> column header
DEFAULT_SCHEMA: dict[str, str] = {name: name for name in REQUIRED_FIELDS + OPTIONAL_FIELDS}

# headers as they appear in a search engine's query report export
DISPLAY_SCHEMA: dict[str, str] = {
    "search_query": "Search Query",
    "impressions": "Impressions",
    "product": "Product/Keyword",
    "clicks": "Clicks",
    "metric_day": "Metric Day",
    "ad_campaign": "Ad Campaign",
    "cost": "Cost",
    "profit": "Profit",
}


class ReportSchemaError(ValueError):
    """A required column is missing from the report header."""


class EmptyGraphError(ValueError):
    """No (query, product) pair with positive impressions survived aggregation."""


@dataclass(frozen=True)
class QueryReportRow:
    search_query: str
    impressions: int
    product: str
    clicks: int
    metric_day: dt.date
    ad_campaign: str
    cost: float = 0.0
    profit: float = 0.0


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParsedReport:
    """Result of :func:`parse_report`.

    Iterating over it yields the well-formed rows.
    """

    rows: list[QueryReportRow]
    errors: list[RowError] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    has_cost: bool = False
    has_profit: bool = False

    @property
    def n_malformed(self) -> int:
        return len(self.errors)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)


def _parse_count(text: str, name: str) -> int:
    text = text.strip()
    if not re.fullmatch(r"[+]?\d+", text):
        raise ValueError(f"{name}={text!r} is not a non-negative integer")
    return int(text)


def _parse_amount(text: str, name: str) -> float:
    text = text.strip()
    if text == "":
        return 0.0
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name}={text!r} is not a number") from None
    if not math.isfinite(value):
        raise ValueError(f"{name}={text!r} is not finite")
    return value


def parse_report(
    stream: IO[str] | Iterable[str],
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> ParsedReport:
    """Parse a delimited query report.

    Parameters
    ----------
    stream : text stream or iterable of lines
        Must start with a header row.
    schema : mapping, optional
        Canonical field name -> header name. Defaults to :data:`DEFAULT_SCHEMA`.
        ``cost`` and ``profit`` are optional; when absent they default to 0.
    delimiter : str
        Field delimiter, ``","`` for CSV or ``"\\t"`` for TSV.

    Returns
    -------
    ParsedReport
        Rows that parsed cleanly plus one :class:`RowError` per rejected line.

    Raises
    ------
    ReportSchemaError
        If the header lacks one of the required columns.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    reader = csv.reader(stream, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ReportSchemaError("report has no header row") from None
    header = [h.strip() for h in header]
    position = {name: i for i, name in enumerate(header)}

    missing = [f"{f} (column {schema.get(f, f)!r})" for f in REQUIRED_FIELDS
               if schema.get(f, f) not in position]
    if missing:
        raise ReportSchemaError("missing required column(s): " + ", ".join(missing))
    cols = {f: position[schema.get(f, f)] for f in REQUIRED_FIELDS}

    result = ParsedReport(rows=[])
    for f in OPTIONAL_FIELDS:
        name = schema.get(f, f)
        if name in position:
            cols[f] = position[name]
            setattr(result, f"has_{f}", True)
        else:
            msg = f"column {name!r} absent; {f} defaults to 0"
            log.warning(msg)
            result.warnings.append(msg)

    width = max(cols.values()) + 1
    for line_no, record in enumerate(reader, start=2):
        if not record or all(not cell.strip() for cell in record):
            continue
        try:
            if len(record) < width:
                raise ValueError(f"expected at least {width} fields, got {len(record)}")
            query = record[cols["search_query"]].strip()
            product = record[cols["product"]].strip()
            if not query:
                raise ValueError("empty search_query")
            if not product:
                raise ValueError("empty product")
            row = QueryReportRow(
                search_query=query,
                impressions=_parse_count(record[cols["impressions"]], "impressions"),
                product=product,
                clicks=_parse_count(record[cols["clicks"]], "clicks"),
                metric_day=dt.date.fromisoformat(record[cols["metric_day"]].strip()),
                ad_campaign=record[cols["ad_campaign"]].strip(),
                cost=_parse_amount(record[cols["cost"]], "cost") if "cost" in cols else 0.0,
                profit=_parse_amount(record[cols["profit"]], "profit") if "profit" in cols else 0.0,
            )
        except ValueError as exc:
            result.errors.append(RowError(line_no, str(exc)))
            continue
        result.rows.append(row)

    if result.errors:
        log.warning("skipped %d malformed row(s)", len(result.errors))
    return result


def detect_schema(header: Sequence[str]) -> dict[str, str]:
    """:data:`DISPLAY_SCHEMA` when ``header`` uses its column names, else :data:`DEFAULT_SCHEMA`."""
    cells = {h.strip() for h in header}
    if DISPLAY_SCHEMA["search_query"] in cells:
        return dict(DISPLAY_SCHEMA)
    return dict(DEFAULT_SCHEMA)


def read_report(path: str | os.PathLike, schema: Mapping[str, str] | None = None,
                delimiter: str | None = None) -> ParsedReport:
    """Open and parse a report file.

    ``.tsv`` files default to tab delimiting. Without a ``schema`` the header
    decides between the export column names and the canonical field names.
    """
    path = Path(path)
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    with open(path, newline="", encoding="utf-8") as fh:
        if schema is None:
            header = next(csv.reader([fh.readline()], delimiter=delimiter), [])
            schema = detect_schema(header)
            fh.seek(0)
        return parse_report(fh, schema=schema, delimiter=delimiter)


def _format_amount(value: float) -> str:
    return repr(float(value))


def format_row(row: QueryReportRow, delimiter: str = ",", financials: bool = False) -> str:
    """Serialize one row in the column order of :data:`REQUIRED_FIELDS`."""
    cells = [row.search_query, str(row.impressions), row.product, str(row.clicks),
             row.metric_day.isoformat(), row.ad_campaign]
    if financials:
        cells += [_format_amount(row.cost), _format_amount(row.profit)]
    buf = io.StringIO()
    csv.writer(buf, delimiter=delimiter, lineterminator="").writerow(cells)
    return buf.getvalue()


def write_report(rows: Iterable[QueryReportRow], stream: IO[str], delimiter: str = ",",
                 financials: bool = False, schema: Mapping[str, str] | None = None) -> None:
    schema = DEFAULT_SCHEMA if schema is None else schema
    fields = REQUIRED_FIELDS + (OPTIONAL_FIELDS if financials else ())
    writer = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    writer.writerow([schema.get(f, f) for f in fields])
    for row in rows:
        stream.write(format_row(row, delimiter, financials) + "\n")


_WS = re.compile(r"\s+")


def normalize_query(text: str, lowercase: bool = True) -> str:
    """Trim, collapse internal whitespace and (optionally) lowercase."""
    text = _WS.sub(" ", text.strip())
    return text.lower() if lowercase else text


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Impression-weighted query -> product graph.

    ``adjacency`` is a ``(n_queries, n_products)`` CSR matrix of summed
    impressions with sorted column indices; node ids are dense and follow the
    lexicographic order of the query / product strings.
    """

    queries: tuple[str, ...]
    products: tuple[str, ...]
    adjacency: sp.csr_matrix
    impressions: np.ndarray
    clicks: np.ndarray
    cost: np.ndarray
    profit: np.ndarray
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (len(self.queries), len(self.products)):
            raise ValueError("adjacency shape does not match node sets")
        for arr in (a.indptr, a.indices, a.data, self.impressions, self.clicks, self.cost, self.profit):
            arr.setflags(write=False)

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    @property
    def n_products(self) -> int:
        return len(self.products)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz)

    @property
    def query_degree(self) -> np.ndarray:
        """Number of distinct products each query drove impressions to."""
        return np.diff(self.adjacency.indptr)

    def degree(self, query: int) -> int:
        p = self.adjacency.indptr
        return int(p[query + 1] - p[query])

    def neighbors(self, query: int) -> tuple[np.ndarray, np.ndarray]:
        """Product ids and impression weights of one query."""
        a = self.adjacency
        lo, hi = a.indptr[query], a.indptr[query + 1]
        return a.indices[lo:hi], a.data[lo:hi]

    def weight(self, query: int, product: int) -> int:
        return int(self.adjacency[query, product])

    def product_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.products)}

    def query_index(self) -> dict[str, int]:
        return {q: i for i, q in enumerate(self.queries)}

    def edges(self):
        """Iterate ``(query_id, product_id, weight)`` in row-major order."""
        a = self.adjacency
        rows = np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))
        return zip(rows.tolist(), a.indices.tolist(), a.data.tolist())

    def equals(self, other: "BipartiteGraph") -> bool:
        if self.queries != other.queries or self.products != other.products:
            return False
        a, b = self.adjacency, other.adjacency
        return (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
                and np.array_equal(a.data, b.data)
                and all(np.array_equal(getattr(self, m), getattr(other, m))
                        for m in ("impressions", "clicks", "cost", "profit")))

    @classmethod
    def from_edges(cls, queries: Sequence[str], products: Sequence[str],
                   edges: Iterable[tuple[int, int, int]], **metrics) -> "BipartiteGraph":
        """Build directly from integer edge triples (duplicates are summed).

        Per-product metrics default to impressions derived from the edges and
        zero clicks/cost/profit.
        """
        triples = list(edges)
        nq, npr = len(queries), len(products)
        if triples:
            q, p, w = (np.asarray(c) for c in zip(*triples))
        else:
            q = p = w = np.zeros(0, dtype=np.int64)
        if np.any(w <= 0):
            raise ValueError("edge weights must be positive")
        adj = sp.csr_matrix((w.astype(np.int64), (q, p)), shape=(nq, npr))
        adj.sum_duplicates()
        adj.sort_indices()
        imps = np.asarray(adj.sum(axis=0)).ravel().astype(np.float64)
        zeros = np.zeros(npr)
        return cls(
            queries=tuple(queries), products=tuple(products), adjacency=adj,
            impressions=np.asarray(metrics.get("impressions", imps), dtype=np.float64).copy(),
            clicks=np.asarray(metrics.get("clicks", zeros), dtype=np.float64).copy(),
            cost=np.asarray(metrics.get("cost", zeros), dtype=np.float64).copy(),
            profit=np.asarray(metrics.get("profit", zeros), dtype=np.float64).copy(),
        )


def build_bipartite(rows: Iterable[QueryReportRow], lowercase: bool = True) -> BipartiteGraph:
    """Aggregate report rows into a :class:`BipartiteGraph`.

    Rows for the same (normalized query, product) pair are merged across days
    and campaigns. Per-product impressions, clicks, cost and profit are summed
    over every row of the product, including zero-impression rows.

    Raises
    ------
    EmptyGraphError
        If no pair accumulates a positive impression count.
    """
    pair_imps: dict[tuple[str, str], int] = {}
    pair_clicks: dict[tuple[str, str], int] = {}
    prod_parts: dict[str, list[list[float]]] = {}
    for row in rows:
        key = (normalize_query(row.search_query, lowercase), row.product)
        pair_imps[key] = pair_imps.get(key, 0) + row.impressions
        pair_clicks[key] = pair_clicks.get(key, 0) + row.clicks
        parts = prod_parts.setdefault(row.product, [[], [], [], []])
        parts[0].append(row.impressions)
        parts[1].append(row.clicks)
        parts[2].append(row.cost)
        parts[3].append(row.profit)

    kept = {k: v for k, v in pair_imps.items() if v > 0}
    if not kept:
        raise EmptyGraphError("empty graph: no (query, product) pair with positive impressions")

    queries = sorted({q for q, _ in kept})
    products = sorted({p for _, p in kept})
    qidx = {q: i for i, q in enumerate(queries)}
    pidx = {p: i for i, p in enumerate(products)}
    keys = sorted(kept)
    adj = sp.csr_matrix(
        (np.array([kept[k] for k in keys], dtype=np.int64),
         (np.array([qidx[q] for q, _ in keys], dtype=np.int64),
          np.array([pidx[p] for _, p in keys], dtype=np.int64))),
        shape=(len(queries), len(products)),
    )
    adj.sort_indices()

    # fsum is correctly rounded, so totals do not depend on row order
    metrics = np.zeros((4, len(products)))
    for p, parts in prod_parts.items():
        if p in pidx:
            metrics[:, pidx[p]] = [math.fsum(col) for col in parts]

    warnings = []
    anomalies = sum(1 for k in kept if pair_clicks[k] > kept[k])
    if anomalies:
        msg = f"{anomalies} (query, product) pair(s) have more clicks than impressions"
        log.warning(msg)
        warnings.append(msg)
    dropped = len(pair_imps) - len(kept)
    if dropped:
        log.info("dropped %d zero-impression pair(s)", dropped)

    return BipartiteGraph(
        queries=tuple(queries), products=tuple(products), adjacency=adj,
        impressions=metrics[0], clicks=metrics[1], cost=metrics[2], profit=metrics[3],
        warnings=tuple(warnings),
    )


# On-disk layout written by save_bipartite:
#   edges.tsv     header "query_id\tproduct_id\tweight", one edge per line, row-major
#   queries.tsv   header "query_id\tquery"
#   products.tsv  header "product_id\tproduct\timpressions\tclicks\tcost\tprofit"
# Floats are written with repr() so a load/save cycle is lossless.
EDGES_FILE = "edges.tsv"
QUERIES_FILE = "queries.tsv"
PRODUCTS_FILE = "products.tsv"


def _check_token(text: str) -> str:
    if "\t" in text or "\n" in text or "\r" in text:
        raise ValueError(f"identifier {text!r} contains a tab or newline")
    return text


def bipartite_tables(bi: BipartiteGraph) -> dict[str, str]:
    """Render the three TSV tables as strings keyed by file name."""
    edges = ["query_id\tproduct_id\tweight"]
    edges += [f"{q}\t{p}\t{w}" for q, p, w in bi.edges()]
    queries = ["query_id\tquery"] + [f"{i}\t{_check_token(q)}" for i, q in enumerate(bi.queries)]
    products = ["product_id\tproduct\timpressions\tclicks\tcost\tprofit"]
    for i, p in enumerate(bi.products):
        vals = "\t".join(_format_amount(getattr(bi, m)[i]) for m in ("impressions", "clicks", "cost", "profit"))
        products.append(f"{i}\t{_check_token(p)}\t{vals}")
    return {
        EDGES_FILE: "\n".join(edges) + "\n",
        QUERIES_FILE: "\n".join(queries) + "\n",
        PRODUCTS_FILE: "\n".join(products) + "\n",
    }


def save_bipartite(bi: BipartiteGraph, directory: str | os.PathLike) -> list[Path]:
    from serpsplit.io import atomic_write_text

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in bipartite_tables(bi).items():
        paths.append(atomic_write_text(directory / name, text))
    return paths


def _read_tsv(path: Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return [line.split("\t") for line in lines[1:] if line]


def load_bipartite(directory: str | os.PathLike) -> BipartiteGraph:
    """Inverse of :func:`save_bipartite`."""
    directory = Path(directory)
    qrows = _read_tsv(directory / QUERIES_FILE)
    prows = _read_tsv(directory / PRODUCTS_FILE)
    erows = _read_tsv(directory / EDGES_FILE)
    if [int(r[0]) for r in qrows] != list(range(len(qrows))):
        raise ValueError("queries.tsv ids are not dense 0..n-1")
    if [int(r[0]) for r in prows] != list(range(len(prows))):
        raise ValueError("products.tsv ids are not dense 0..n-1")
    bi = BipartiteGraph.from_edges(
        [r[1] for r in qrows], [r[1] for r in prows],
        ((int(q), int(p), int(w)) for q, p, w in erows),
        impressions=[float(r[2]) for r in prows], clicks=[float(r[3]) for r in prows],
        cost=[float(r[4]) for r in prows], profit=[float(r[5]) for r in prows],
    )
    return bi
