"""Command-line pipeline: one subcommand per stage plus ``pipeline`` to chain them.

Every successful run writes its artifacts atomically under ``--out-dir`` and a
``manifest.<subcommand>.json`` recording the tool version, resolved
configuration, seed, wall time and SHA-256 digests of inputs and outputs.
Failures print a JSON object to stderr and exit with status 1 (runtime) or
2 (usage).

Option values resolve in increasing priority: built-in defaults, top-level
keys of the ``--config`` file, its ``[<subcommand>]`` table, then flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from serpsplit import __version__
from serpsplit.config import load_config
from serpsplit.design import (
    DEFAULT_AXES,
    DEFAULT_BINS,
    METRICS,
    assign,
    cluster_metrics,
    save_balance_report,
    save_plan,
    stratify,
)
from serpsplit.infer import did_estimate, power_simulation, read_panel
from serpsplit.ingest import build_bipartite, load_bipartite, read_report, save_bipartite
from serpsplit.io import atomic_write_json, atomic_write_text, sha256_file
from serpsplit.partition import (
    DEFAULT_EPSILON,
    Partition,
    WGraph,
    leakage_sweep,
    load_assignment,
    partition_kway,
    save_assignment,
    save_curve,
)
from serpsplit.partition.result import make_partition
from serpsplit.project import ProductGraph, load_product_graph, project, save_product_graph
from serpsplit.simulate import DESIGNS, MarketConfig, run_meta_experiment

SUBCOMMANDS = ("ingest", "project", "partition", "sweep", "assign", "analyze", "power",
               "simulate", "pipeline")

BIPARTITE_DIR = "bipartite"
GRAPH_FILE = "product_graph.tsv"
GRAPH_META_FILE = "product_graph.meta.json"
CURVE_FILE = "leakage_curve.csv"
ASSIGNMENT_FILE = "assignment.csv"
PLAN_FILE = "plan.csv"
BALANCE_FILE = "balance_report.json"
DID_FILE = "did_result.json"
POWER_FILE = "power.json"
SIM_REPORT_FILE = "simulation_report.json"
SIM_REPLICATIONS_FILE = "simulation_replications.csv"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": None,
    "out_dir": ".",
    "delimiter": None,
    "lowercase": True,
    "hub_cap": None,
    "k": None,
    "k_sweep": None,
    "epsilon": DEFAULT_EPSILON,
    "node_weight": "unit",
    "axes": list(DEFAULT_AXES),
    "bins": DEFAULT_BINS,
    "spend_tolerance": 0.01,
    "max_attempts": 1000,
    "lift": 0.05,
    "sims": 1000,
    "alpha": 0.05,
    "clusters": None,
    "mode": "resample",
    "replications": 100,
    "no_timings": False,
}


class UsageError(Exception):
    """Bad command line or configuration; exit status 2."""


class JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def toy_report_path() -> Path:
    """Path of the bundled 12-row example report."""
    return Path(str(resources.files("serpsplit") / "data" / "toy_report.csv"))


# --- argument parsing -----------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [x for x in text.replace(" ", "").split(",") if x]


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="TOML or key = value file")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--threads", type=int, default=d,
                   help="worker processes where a stage can use them (default: all cores)")
    p.add_argument("--out-dir", default=d, help="artifact directory (default: current)")


def _partition_flags(p):
    p.add_argument("--epsilon", type=float)
    p.add_argument("--node-weight", choices=("unit", "impressions"))


def _design_flags(p):
    p.add_argument("--axes", type=_str_list, help=f"comma-separated subset of {','.join(METRICS)}")
    p.add_argument("--bins", type=int)
    p.add_argument("--spend-tolerance", type=float)
    p.add_argument("--max-attempts", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(prog="serpsplit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=JsonArgumentParser)
    sub.required = True
    common = JsonArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("ingest", "query report -> bipartite graph tables")
    p.add_argument("report", help="CSV/TSV query report with header")
    p.add_argument("--delimiter")
    p.add_argument("--no-lowercase", dest="lowercase", action="store_const", const=False)

    p = add("project", "bipartite graph -> weighted product graph")
    p.add_argument("--bipartite", help=f"directory from ingest (default OUT/{BIPARTITE_DIR})")
    p.add_argument("--hub-cap", type=int)

    p = add("partition", "product graph -> k balanced clusters")
    p.add_argument("--bipartite")
    p.add_argument("--graph")
    p.add_argument("--k", type=int)
    _partition_flags(p)

    p = add("sweep", "leakage for several k and the elbow choice")
    p.add_argument("--bipartite")
    p.add_argument("--graph")
    p.add_argument("--k-sweep", type=_int_list)
    p.add_argument("--k", type=int, help="override the elbow choice")
    p.add_argument("--no-timings", action="store_const", const=True,
                   help="leave runtime_ms blank so the curve is byte-reproducible")
    _partition_flags(p)

    p = add("assign", "clusters -> stratified, spend-matched arms")
    p.add_argument("--bipartite")
    p.add_argument("--graph")
    p.add_argument("--assignment")
    _design_flags(p)

    p = add("analyze", "DID with cluster-robust standard error")
    p.add_argument("--panel", required=True)

    p = add("power", "simulation-based power of the cluster DID test")
    p.add_argument("--template", required=True, help="panel CSV supplying cluster outcomes")
    p.add_argument("--lift", type=float)
    p.add_argument("--sims", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--clusters", type=int, help="clusters per simulated experiment")
    p.add_argument("--mode", choices=("resample", "parametric"))

    p = add("simulate", "design meta-experiment on synthetic markets")
    p.add_argument("--replications", type=int)

    p = add("pipeline", "ingest -> project -> sweep -> partition -> assign")
    p.add_argument("report", nargs="?", help="query report (default: bundled toy data)")
    p.add_argument("--delimiter")
    p.add_argument("--no-lowercase", dest="lowercase", action="store_const", const=False)
    p.add_argument("--hub-cap", type=int)
    p.add_argument("--k-sweep", type=_int_list)
    p.add_argument("--k", type=int, help="override the elbow choice")
    p.add_argument("--no-timings", action="store_const", const=True)
    _partition_flags(p)
    _design_flags(p)
    return parser


def resolve(args: argparse.Namespace) -> tuple[dict, dict]:
    """Merge defaults, config file and flags; returns ``(options, raw config)``."""
    raw: dict = {}
    if getattr(args, "config", None):
        raw = load_config(args.config)
    opts = dict(DEFAULTS)

    def merge(src):
        for key, value in src.items():
            key = key.replace("-", "_")
            if key in DEFAULTS and not isinstance(value, dict):
                opts[key] = value

    merge(raw)
    if isinstance(raw.get(args.command), dict):
        merge(raw[args.command])
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            opts[key] = value
    for key in ("axes",):
        if isinstance(opts[key], str):
            opts[key] = _str_list(opts[key])
    for key in ("k_sweep",):
        if isinstance(opts[key], str):
            opts[key] = _int_list(opts[key])
        elif isinstance(opts[key], int):
            opts[key] = [opts[key]]
    if opts["threads"] is None:
        opts["threads"] = os.cpu_count() or 1
    if opts["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return opts, raw


# --- run bookkeeping ------------------------------------------------------


class Run:
    """Collects input/output paths of one invocation for its manifest."""

    def __init__(self, command: str, opts: dict):
        self.command = command
        self.opts = opts
        self.out = Path(opts["out_dir"])
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.results: dict = {}
        self.t0 = time.perf_counter()

    def need(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(2, "input not found", str(path))
        if path.is_dir():
            self.inputs.extend(sorted(p for p in path.iterdir() if p.is_file()))
        else:
            self.inputs.append(path)
        return path

    def wrote(self, *paths: str | os.PathLike) -> None:
        for p in paths:
            p = Path(p)
            if p.is_dir():
                self.outputs.extend(sorted(q for q in p.iterdir() if q.is_file()))
            else:
                self.outputs.append(p)

    def _rel(self, p: Path) -> str:
        try:
            return p.resolve().relative_to(self.out.resolve()).as_posix()
        except ValueError:
            return str(p)

    def manifest(self) -> dict:
        return {
            "tool": "serpsplit",
            "version": __version__,
            "subcommand": self.command,
            "config": _jsonable(self.opts),
            "seed": self.opts["seed"],
            "inputs": {str(p): sha256_file(p) for p in self.inputs},
            "outputs": {self._rel(p): sha256_file(p) for p in self.outputs},
            "results": _jsonable(self.results),
            "wall_time_s": time.perf_counter() - self.t0,
        }

    def finish(self) -> Path:
        path = self.out / f"manifest.{self.command}.json"
        atomic_write_json(path, self.manifest())
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


# --- stages ---------------------------------------------------------------


def _path(opts, given, default_name):
    return Path(given) if given else Path(opts["out_dir"]) / default_name


def stage_ingest(run: Run, report) -> "BipartiteGraph":
    report = run.need(report)
    parsed = read_report(report, delimiter=run.opts["delimiter"])
    bi = build_bipartite(parsed, lowercase=run.opts["lowercase"])
    out = run.out / BIPARTITE_DIR
    save_bipartite(bi, out)
    run.wrote(out)
    run.results["ingest"] = {
        "rows": len(parsed), "malformed_rows": parsed.n_malformed,
        "warnings": list(parsed.warnings) + list(bi.warnings),
        "queries": bi.n_queries, "products": bi.n_products, "edges": bi.n_edges,
    }
    return bi


def stage_project(run: Run, bi) -> ProductGraph:
    g = project(bi, hub_cap=run.opts["hub_cap"])
    path, meta = run.out / GRAPH_FILE, run.out / GRAPH_META_FILE
    save_product_graph(g, path, meta)
    run.wrote(path, meta)
    run.results["project"] = dict(g.meta)
    return g


def _weighted(g: ProductGraph, bi, mode: str) -> ProductGraph:
    if mode == "impressions":
        return g.with_node_weight(bi.impressions)
    return g


def stage_sweep(run: Run, g: ProductGraph, ks: Sequence[int] | None, chosen: int | None):
    if not ks:
        ks = default_k_sweep(g.n_nodes)
    curve = leakage_sweep(g, ks, run.opts["epsilon"], run.opts["seed"], chosen_k=chosen)
    path = run.out / CURVE_FILE
    save_curve(curve, path, timings=not run.opts["no_timings"])
    run.wrote(path)
    run.results["sweep"] = {
        "ks": curve.ks, "leakage": curve.leakages, "chosen_k": curve.chosen_k, "method": curve.method,
    }
    return curve


def default_k_sweep(n_nodes: int) -> list[int]:
    """Powers of two from 2 up to half the node count (at least ``[min(2, n)]``)."""
    ks, k = [], 2
    while k <= n_nodes // 2:
        ks.append(k)
        k *= 2
    return ks or [max(1, min(2, n_nodes))]


def stage_partition(run: Run, g: ProductGraph, k: int, part: Partition | None = None) -> Partition:
    if part is None:
        part = partition_kway(g, k, run.opts["epsilon"], run.opts["seed"])
    path = run.out / ASSIGNMENT_FILE
    save_assignment(part, path)
    run.wrote(path)
    run.results["partition"] = {
        "k": part.k, "edgecut": part.edgecut, "leakage": part.leakage,
        "total_weight": part.total_weight, "cluster_sizes": part.cluster_sizes.tolist(),
        "max_cluster_weight": part.max_cluster_weight,
    }
    return part


def stage_assign(run: Run, bi, g: ProductGraph, part: Partition):
    o = run.opts
    metrics = cluster_metrics(bi, part)
    strata = stratify(metrics, o["axes"], o["bins"])
    plan = assign(metrics, strata, o["spend_tolerance"], o["max_attempts"], o["seed"], g, part)
    plan_path, report_path = run.out / PLAN_FILE, run.out / BALANCE_FILE
    save_plan(plan, plan_path)
    save_balance_report(plan, report_path)
    run.wrote(plan_path, report_path)
    run.results["assign"] = plan.report()
    return plan


def _load_bipartite(run: Run, given):
    return load_bipartite(run.need(_path(run.opts, given, BIPARTITE_DIR)))


def _load_graph(run: Run, given, bi) -> ProductGraph:
    path = run.need(_path(run.opts, given, GRAPH_FILE))
    meta = path.with_name(GRAPH_META_FILE) if given is None else None
    g = load_product_graph(path, products=bi.products, meta_path=meta)
    return _weighted(g, bi, run.opts["node_weight"])


def _partition_from_file(run: Run, given, g: ProductGraph) -> Partition:
    mapping = load_assignment(run.need(_path(run.opts, given, ASSIGNMENT_FILE)))
    missing = [p for p in g.products if p not in mapping]
    if missing:
        raise ValueError(f"assignment has no cluster for product {missing[0]!r}")
    labels = [mapping[p] for p in g.products]
    k = max(labels) + 1
    if sorted(set(labels)) != list(range(k)):
        raise ValueError("cluster ids in the assignment must be 0..k-1 with none empty")
    return make_partition(WGraph.from_product_graph(g), labels, k, run.opts["epsilon"], g.products)


# --- subcommand handlers --------------------------------------------------


def cmd_ingest(run, args):
    stage_ingest(run, args.report)


def cmd_project(run, args):
    stage_project(run, _load_bipartite(run, args.bipartite))


def cmd_partition(run, args):
    if run.opts["k"] is None:
        raise UsageError("partition needs --k")
    bi = _load_bipartite(run, args.bipartite)
    stage_partition(run, _load_graph(run, args.graph, bi), int(run.opts["k"]))


def cmd_sweep(run, args):
    bi = _load_bipartite(run, args.bipartite)
    stage_sweep(run, _load_graph(run, args.graph, bi), run.opts["k_sweep"], run.opts["k"])


def cmd_assign(run, args):
    bi = _load_bipartite(run, args.bipartite)
    g = _load_graph(run, args.graph, bi)
    stage_assign(run, bi, g, _partition_from_file(run, args.assignment, g))


def cmd_analyze(run, args):
    res = did_estimate(read_panel(run.need(args.panel)))
    path = run.out / DID_FILE
    atomic_write_json(path, _jsonable(res.to_dict()))
    run.wrote(path)
    run.results["analyze"] = res.to_dict()


def cmd_power(run, args):
    o = run.opts
    res = power_simulation(read_panel(run.need(args.template)), o["lift"], n_sims=o["sims"],
                           alpha=o["alpha"], seed=o["seed"], n_clusters=o["clusters"], mode=o["mode"])
    path = run.out / POWER_FILE
    atomic_write_json(path, _jsonable(res.to_dict()))
    run.wrote(path)
    run.results["power"] = res.to_dict()


def market_config(raw: dict, opts: dict, seed_given: bool) -> MarketConfig:
    names = {f.name for f in fields(MarketConfig)}
    data = {k: v for k, v in raw.items() if k in names and not isinstance(v, dict)}
    if isinstance(raw.get("market"), dict):
        data.update(raw["market"])
    if seed_given:
        data["seed"] = opts["seed"]
    return MarketConfig.from_mapping(data)


def cmd_simulate(run, args):
    if args.config:
        run.need(args.config)
    cfg = market_config(run._raw, run.opts, getattr(args, "seed", None) is not None)
    report = run_meta_experiment(cfg, DESIGNS, run.opts["replications"], n_jobs=run.opts["threads"])
    run.opts["market"] = report.to_dict()["config"]
    rpath, cpath = run.out / SIM_REPORT_FILE, run.out / SIM_REPLICATIONS_FILE
    atomic_write_json(rpath, _jsonable(report.to_dict()))
    buf = io.StringIO()
    names = [f.name for f in fields(report.replications[0])]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for r in report.replications:
        w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
    atomic_write_text(cpath, buf.getvalue())
    run.wrote(rpath, cpath)
    run.results["simulate"] = report.to_dict()["designs"]


def cmd_pipeline(run, args):
    report = args.report or toy_report_path()
    bi = stage_ingest(run, report)
    g = _weighted(stage_project(run, bi), bi, run.opts["node_weight"])
    curve = stage_sweep(run, g, run.opts["k_sweep"], run.opts["k"])
    k = curve.chosen_k
    part = stage_partition(run, g, k, curve.partitions.get(k))
    stage_assign(run, bi, g, part)


HANDLERS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def _error(kind: str, message: str, **extra) -> str:
    return json.dumps({"error": kind, "message": message, **extra}, sort_keys=True)


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts, raw = resolve(args)
    except UsageError as err:
        print(_error("usage", str(err)), file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(_error("FileNotFoundError", "config file not found", path=err.filename), file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(_error(type(err).__name__, str(err)), file=sys.stderr)
        return 1
    run = Run(args.command, opts)
    run._raw = raw
    try:
        HANDLERS[args.command](run, args)
        manifest = run.finish()
    except UsageError as err:
        print(_error("usage", str(err)), file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(_error("FileNotFoundError", err.strerror or str(err), path=err.filename), file=sys.stderr)
        return 1
    except Exception as err:  # every stage failure becomes exit 1 with a JSON message
        print(_error(type(err).__name__, str(err)), file=sys.stderr)
        return 1
    print(json.dumps({"subcommand": args.command, "manifest": str(manifest),
                      "results": _jsonable(run.results)}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
