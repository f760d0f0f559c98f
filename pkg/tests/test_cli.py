import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from orderspn import cli, oracle
from orderspn.cli import RunConfig, run_pipeline
from orderspn.leaf import EdgeConjunction
from orderspn.model import Dataset, sample_erdos_renyi_dag, sample_weights_and_data
from orderspn.score import build_score_table, full_candidates


def small_config(tmp_path, **over):
    cfg = {
        "d": 4, "n_train": 40, "n_test": 50, "seed": 3,
        "expansion_factors": [6, 2], "iters": 60,
        "eshd_samples": 20, "mll_samples": 10,
        "coverage_edges": [1], "coverage_trials": 5,
        "out_dir": str(tmp_path / "out"),
    }
    cfg.update(over)
    return cfg


class TestRunConfig:
    def test_defaults_fill_in(self):
        cfg = RunConfig.from_dict({"d": 4, "expansion_factors": [4, 2]})
        assert cfg.expected_edges == 8

    def test_unknown_field_rejected(self):
        with pytest.raises(cli.ConfigError):
            RunConfig.from_dict({"d": 4, "expansion_factors": [4, 2], "bogus": 1})

    def test_wrong_expansion_length_rejected(self):
        with pytest.raises(cli.ConfigError):
            RunConfig.from_dict({"d": 8, "expansion_factors": [4, 2]})

    def test_bad_oracle_rejected(self):
        with pytest.raises(cli.ConfigError):
            RunConfig.from_dict(
                {"d": 4, "expansion_factors": [4, 2], "oracle": "magic"}
            )


class TestPipeline:
    def test_artifacts_written(self, tmp_path):
        cfg = RunConfig.from_dict(small_config(tmp_path))
        report = run_pipeline(cfg)
        out = tmp_path / "out"
        for name in ("circuit.json", "metrics.json", "bce.csv", "elbo_trace.csv"):
            assert (out / name).exists()
        assert 0.0 <= report["metrics"]["auroc"] <= 1.0
        assert report["metrics"]["mse_ce"] >= 0.0

    def test_seeded_reruns_bit_identical(self, tmp_path):
        a = run_pipeline(RunConfig.from_dict(small_config(tmp_path / "a")))
        b = run_pipeline(RunConfig.from_dict(small_config(tmp_path / "b")))
        a["runtime_s"] = b["runtime_s"] = 0
        a["config"]["out_dir"] = b["config"]["out_dir"] = ""
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
        bytes_a = (tmp_path / "a" / "out" / "circuit.json").read_bytes()
        bytes_b = (tmp_path / "b" / "out" / "circuit.json").read_bytes()
        assert bytes_a == bytes_b


class TestCommands:
    def test_run_and_query_round_trip(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_config(tmp_path)))
        assert cli.main(["run", "--config", str(cfg_path)]) == 0
        capsys.readouterr()
        lits = tmp_path / "q.json"
        lits.write_text(json.dumps([{"child": 1, "parent": 0, "present": True}]))
        rc = cli.main([
            "query", "--circuit", str(tmp_path / "out" / "circuit.json"),
            "--literals", str(lits),
        ])
        out = json.loads(capsys.readouterr().out)
        assert rc == 0
        assert out["prob"] == pytest.approx(math.exp(out["log_prob"]))
        assert 0.0 <= out["prob"] <= 1.0

    def test_query_conditional_form(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_config(tmp_path)))
        cli.main(["run", "--config", str(cfg_path)])
        capsys.readouterr()
        lits = tmp_path / "q.json"
        lits.write_text(json.dumps({
            "query": [{"child": 1, "parent": 0, "present": True}],
            "given": [{"child": 2, "parent": 3, "present": False}],
        }))
        rc = cli.main([
            "query", "--circuit", str(tmp_path / "out" / "circuit.json"),
            "--literals", str(lits),
        ])
        assert rc == 0
        assert "log_prob" in json.loads(capsys.readouterr().out)

    def test_bce_command_emits_square_csv(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small_config(tmp_path)))
        cli.main(["run", "--config", str(cfg_path)])
        capsys.readouterr()
        rc = cli.main([
            "bce", "--circuit", str(tmp_path / "out" / "circuit.json"),
            "--weight", "1.0",
        ])
        rows = [r.split(",") for r in capsys.readouterr().out.strip().splitlines()]
        assert rc == 0
        assert len(rows) == 4 and all(len(r) == 4 for r in rows)

    def test_exact_command_matches_oracle(self, tmp_path, capsys):
        d = 3
        dag = sample_erdos_renyi_dag(d, 3, 0)
        _, data = sample_weights_and_data(dag, 30, rng_seed=1)
        path = tmp_path / "data.csv"
        data.save_csv(path)
        rc = cli.main(["exact", "--d", "3", "--data", str(path)])
        out = json.loads(capsys.readouterr().out)
        assert rc == 0
        scores = build_score_table(data, full_candidates(d))
        post = oracle.enumerate_posterior(scores)
        assert out["log_z"] == pytest.approx(post.log_z, abs=1e-9)
        want = oracle.exact_edge_marginals(post)
        assert np.allclose(np.array(out["edge_marginals"]), want, atol=1e-9)

    def test_bench_command(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("ORDERSPN_THREADS", "1")
        sweep = {
            "base": small_config(tmp_path, out_dir=None),
            "runs": [{"seed": 1}, {"seed": 2}],
        }
        sweep_path = tmp_path / "sweep.json"
        sweep_path.write_text(json.dumps(sweep))
        rc = cli.main(["bench", "--sweep", str(sweep_path),
                       "--out", str(tmp_path / "bench.json")])
        out = json.loads(capsys.readouterr().out)
        assert rc == 0
        assert len(out["runs"]) == 2
        assert "auroc" in out["summary"]
        assert (tmp_path / "bench.json").exists()


class TestExitCodes:
    def test_missing_config_file(self, capsys):
        assert cli.main(["run", "--config", "/nonexistent.json"]) == 2

    def test_invalid_config(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"d": -1}))
        assert cli.main(["run", "--config", str(p)]) == 2

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert cli.main(["run", "--config", str(p)]) == 2

    def test_numerical_failure(self, tmp_path, capsys):
        # constant-column data makes the posterior matrix singular for some
        # parent blocks only in pathological cases; force failure instead by
        # zero training rows after validation is impossible, so patch a stage
        cfg = small_config(tmp_path)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        import orderspn.cli as climod

        orig = climod.build_score_table

        def boom(*a, **k):
            raise climod.ScoreNumericalError("non-positive-definite block")

        climod.build_score_table = boom
        try:
            assert cli.main(["run", "--config", str(p)]) == 3
        finally:
            climod.build_score_table = orig

    def test_threads_env_validated(self, monkeypatch):
        monkeypatch.setenv("ORDERSPN_THREADS", "zero")
        with pytest.raises(cli.ConfigError):
            cli.max_threads()
        monkeypatch.setenv("ORDERSPN_THREADS", "3")
        assert cli.max_threads() == 3

    def test_console_script_installed(self):
        proc = subprocess.run(
            [sys.executable, "-m", "orderspn.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "run" in proc.stdout
