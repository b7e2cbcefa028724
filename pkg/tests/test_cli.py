import json
import os
import subprocess
import sys

import numpy as np
import pytest

from serpsplit.cli import default_k_sweep, main
from serpsplit.config import load_config, parse_flat
from serpsplit.infer import PanelObservation, write_panel
from serpsplit.io import atomic_write_text, sha256_file

ARTIFACTS = ["bipartite/edges.tsv", "bipartite/queries.tsv", "bipartite/products.tsv",
             "product_graph.tsv", "product_graph.meta.json", "leakage_curve.csv",
             "assignment.csv", "plan.csv", "balance_report.json"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestPipeline:
    def test_toy_pipeline_artifacts_and_manifest(self, tmp_path, capsys):
        code, out, err = run(capsys, "pipeline", "--out-dir", tmp_path, "--seed", 1)
        assert code == 0, err
        for name in ARTIFACTS:
            assert (tmp_path / name).is_file(), name
        manifest = json.loads((tmp_path / "manifest.pipeline.json").read_text())
        assert manifest["subcommand"] == "pipeline" and manifest["seed"] == 1
        assert set(manifest["outputs"]) == set(ARTIFACTS)
        for name, digest in manifest["outputs"].items():
            assert sha256_file(tmp_path / name) == digest
        assert len(manifest["inputs"]) == 1
        assert manifest["config"]["epsilon"] == 0.05 and manifest["wall_time_s"] >= 0
        summary = json.loads(out)
        assert summary["results"]["ingest"]["rows"] == 12

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(capsys, "pipeline", "--out-dir", a, "--no-timings")[0] == 0
        assert run(capsys, "pipeline", "--out-dir", b, "--no-timings")[0] == 0
        for name in ARTIFACTS:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        ma = json.loads((a / "manifest.pipeline.json").read_text())
        mb = json.loads((b / "manifest.pipeline.json").read_text())
        assert ma["outputs"] == mb["outputs"] and ma["inputs"] == mb["inputs"]

    def test_stages_match_pipeline(self, tmp_path, capsys, toy_report):
        p, s = tmp_path / "p", tmp_path / "s"
        assert run(capsys, "pipeline", toy_report, "--out-dir", p, "--no-timings", "--k-sweep", "2,3")[0] == 0
        chosen = json.loads((p / "manifest.pipeline.json").read_text())["results"]["sweep"]["chosen_k"]
        assert run(capsys, "ingest", toy_report, "--out-dir", s)[0] == 0
        assert run(capsys, "project", "--out-dir", s)[0] == 0
        assert run(capsys, "sweep", "--k-sweep", "2,3", "--no-timings", "--out-dir", s)[0] == 0
        assert run(capsys, "partition", "--k", chosen, "--out-dir", s)[0] == 0
        assert run(capsys, "assign", "--out-dir", s)[0] == 0
        for name in ARTIFACTS:
            assert (p / name).read_bytes() == (s / name).read_bytes(), name

    def test_config_file_and_flag_priority(self, tmp_path, capsys):
        cfg = tmp_path / "run.toml"
        cfg.write_text('epsilon = 0.2\nseed = 5\n[pipeline]\nspend_tolerance = 0.5\naxes = "cost"\n')
        code, out, err = run(capsys, "--config", cfg, "pipeline", "--out-dir", tmp_path, "--seed", 6)
        assert code == 0, err
        conf = json.loads((tmp_path / "manifest.pipeline.json").read_text())["config"]
        assert conf["epsilon"] == 0.2 and conf["spend_tolerance"] == 0.5
        assert conf["axes"] == ["cost"] and conf["seed"] == 6

    def test_impression_node_weights(self, tmp_path, capsys):
        code, _, err = run(capsys, "pipeline", "--out-dir", tmp_path, "--node-weight", "impressions",
                           "--epsilon", "0.5", "--spend-tolerance", "1")
        assert code == 0, err


class TestSubcommands:
    def test_sweep_single_k(self, tmp_path, capsys, toy_report):
        run(capsys, "ingest", toy_report, "--out-dir", tmp_path)
        run(capsys, "project", "--out-dir", tmp_path)
        code, out, _ = run(capsys, "sweep", "--k-sweep", "1", "--out-dir", tmp_path)
        assert code == 0
        lines = (tmp_path / "leakage_curve.csv").read_text().splitlines()
        assert lines[0] == "k,edgecut,leakage,runtime_ms" and len(lines) == 2
        k, edgecut, leak, _ = lines[1].split(",")
        assert (k, float(edgecut), float(leak)) == ("1", 0.0, 0.0)
        assert json.loads(out)["results"]["sweep"]["chosen_k"] == 1

    def test_analyze_and_power(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        panel = []
        for c in range(16):
            arm = "treatment" if c % 2 else "control"
            base = rng.lognormal(3, 0.3)
            panel += [PanelObservation(c, "pre", arm, base * rng.lognormal(0, 0.05)),
                      PanelObservation(c, "post", arm, base * rng.lognormal(0, 0.05))]
        write_panel(panel, tmp_path / "panel.csv")
        code, out, err = run(capsys, "analyze", "--panel", tmp_path / "panel.csv", "--out-dir", tmp_path)
        assert code == 0, err
        res = json.loads((tmp_path / "did_result.json").read_text())
        for key in ("coefficients", "se", "t", "df", "p", "n_clusters"):
            assert key in res
        assert res["df"] == 15
        code, out, err = run(capsys, "power", "--template", tmp_path / "panel.csv", "--lift", "0.05",
                             "--sims", "200", "--alpha", "0.05", "--seed", "3", "--out-dir", tmp_path)
        assert code == 0, err
        pw = json.loads((tmp_path / "power.json").read_text())
        assert pw["n_sims"] == 200 and 0 <= pw["ci_low"] <= pw["power"] <= pw["ci_high"] <= 1

    def test_simulate(self, tmp_path, capsys):
        cfg = tmp_path / "market.toml"
        cfg.write_text("[market]\nn_communities = 4\nproducts_per_community = 8\nqueries_per_community = 16\n")
        code, out, err = run(capsys, "simulate", "--config", cfg, "--replications", 4, "--threads", 1,
                             "--out-dir", tmp_path)
        assert code == 0, err
        rep = json.loads((tmp_path / "simulation_report.json").read_text())
        assert rep["config"]["n_communities"] == 4
        assert set(rep["designs"]) == {"bernoulli_product_split", "cluster_split"}
        lines = (tmp_path / "simulation_replications.csv").read_text().splitlines()
        assert lines[0].startswith("replication,design,measured_lift,true_lift,bias") and len(lines) == 9


class TestErrors:
    def test_missing_input_exit_1(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        code, out, err = run(capsys, "analyze", "--panel", missing, "--out-dir", tmp_path)
        assert code == 1 and out == ""
        payload = json.loads(err)
        assert payload["path"] == str(missing)
        code, _, err = run(capsys, "pipeline", missing, "--out-dir", tmp_path)
        assert code == 1 and json.loads(err)["path"] == str(missing)

    def test_usage_errors_exit_2(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 2 and json.loads(err)["error"] == "usage"
        code, _, err = run(capsys, "partition", "--k", "two")
        assert code == 2 and json.loads(err)["error"] == "usage"
        code, _, err = run(capsys)
        assert code == 2

    def test_stage_failure_exit_1_leaves_no_partial_files(self, tmp_path, capsys):
        run(capsys, "pipeline", "--out-dir", tmp_path)
        before = sorted(p.name for p in tmp_path.iterdir())
        code, _, err = run(capsys, "partition", "--k", "99", "--out-dir", tmp_path)
        assert code == 1 and "more clusters than vertices" in json.loads(err)["message"]
        assert sorted(p.name for p in tmp_path.iterdir()) == before

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "serpsplit.cli", "sweep", "--out-dir", str(tmp_path)],
                              capture_output=True, text=True)
        assert proc.returncode == 1
        assert json.loads(proc.stderr)["error"] == "FileNotFoundError"


class TestHelpers:
    def test_default_k_sweep(self):
        assert default_k_sweep(6) == [2]
        assert default_k_sweep(40) == [2, 4, 8, 16]
        assert default_k_sweep(1) == [1]

    def test_config_parsing(self, tmp_path):
        (tmp_path / "a.toml").write_text('k = 3\n[sweep]\nk_sweep = [2, 4]\n')
        assert load_config(tmp_path / "a.toml") == {"k": 3, "sweep": {"k_sweep": [2, 4]}}
        flat = parse_flat("a = 1\nb: two\nc = 'x y'  # note\nd = true\ne = 0.5\nf =\n")
        assert flat == {"a": 1, "b": "two", "c": "x y", "d": True, "e": 0.5, "f": None}
        with pytest.raises(ValueError):
            parse_flat("just words")

    def test_atomic_write_replaces_and_cleans(self, tmp_path, monkeypatch):
        target = tmp_path / "x.txt"
        atomic_write_text(target, "one")
        atomic_write_text(target, "two")
        assert target.read_text() == "two"

        def boom(*a, **k):
            raise OSError("disk full")

        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(OSError):
            atomic_write_text(target, "three")
        assert target.read_text() == "two"
        assert sorted(p.name for p in tmp_path.iterdir()) == ["x.txt"]
