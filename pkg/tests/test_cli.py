"""End-to-end command-line tests; every case shells out like a user would."""

import json
import subprocess
import sys

import numpy as np
import pytest

from dydila.config import RunConfig, load_config
from dydila.fileio import read_csv, read_pgm, write_tokens_csv

from conftest import mat


def run_cli(*argv, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "dydila.cli", *argv],
        capture_output=True, text=True, cwd=cwd,
    )


@pytest.fixture()
def tiny_config(tmp_path):
    """A dim-8, two-block custom config that keeps subprocess runs fast."""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "preset": "custom", "dim": 8, "heads": 1, "blocks": 2,
        "n_projectors": 2, "n_kernel_factors": 2, "n_lambda_factors": 2,
        "grid": {"h": 2, "w": 3}, "seed": 9,
    }), encoding="utf-8")
    return str(path)


class TestInit:
    def test_writes_default_config(self, tmp_path):
        out = tmp_path / "cfg.json"
        proc = run_cli("init", "--out", str(out))
        assert proc.returncode == 0
        assert f"wrote {out}" in proc.stdout
        assert load_config(out) == RunConfig.from_dict({"preset": "small"})

    def test_preset_and_overrides(self, tmp_path):
        out = tmp_path / "cfg.json"
        proc = run_cli("init", "--preset", "base", "--seed", "3", "--out", str(out))
        assert proc.returncode == 0
        cfg = load_config(out)
        assert cfg.preset == "base" and cfg.dim == 512 and cfg.seed == 3

    def test_dim_override_flips_to_custom(self, tmp_path):
        out = tmp_path / "cfg.json"
        proc = run_cli("init", "--preset", "small", "--dim", "64", "--out", str(out))
        assert proc.returncode == 0
        cfg = load_config(out)
        assert cfg.preset == "custom" and cfg.dim == 64


class TestCheck:
    def test_passes_on_tiny_config(self, tiny_config):
        proc = run_cli("check", "--config", tiny_config)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "FAIL" not in proc.stdout
        assert "0 failed" in proc.stdout

    def test_output_is_byte_stable(self, tiny_config):
        a = run_cli("check", "--config", tiny_config)
        b = run_cli("check", "--config", tiny_config)
        assert a.stdout == b.stdout and a.returncode == b.returncode == 0

    def test_injected_fault_fails(self, tmp_path, tiny_config):
        data = json.loads(open(tiny_config, encoding="utf-8").read())
        data["inject_fault"] = True
        bad = tmp_path / "fault.json"
        bad.write_text(json.dumps(data), encoding="utf-8")
        proc = run_cli("check", "--config", str(bad))
        assert proc.returncode == 1
        assert "FAIL" in proc.stdout
        assert "tdo_reorder_vs_explicit" in proc.stdout

    def test_f32_passes(self, tiny_config):
        proc = run_cli("check", "--config", tiny_config, "--precision", "f32")
        assert proc.returncode == 0, proc.stdout


class TestForward:
    def test_prints_block_lines_and_hash(self, tiny_config):
        proc = run_cli("forward", "--config", tiny_config)
        assert proc.returncode == 0, proc.stderr
        assert "block 0:" in proc.stdout and "block 1:" in proc.stdout
        assert "output sha256 " in proc.stdout

    def test_byte_reproducible(self, tiny_config):
        a = run_cli("forward", "--config", tiny_config)
        b = run_cli("forward", "--config", tiny_config)
        assert a.stdout == b.stdout

    def test_writes_outputs_and_weights(self, tmp_path, tiny_config):
        out = tmp_path / "out.csv"
        routes = tmp_path / "routes.csv"
        proc = run_cli(
            "forward", "--config", tiny_config, "--out", str(out),
            "--routes-out", str(routes), "--save-weights", str(tmp_path / "w"),
        )
        assert proc.returncode == 0, proc.stderr
        header, rows = read_csv(out)
        assert header == [f"c{j}" for j in range(8)]
        assert len(rows) == 6  # grid 2x3
        rheader, rrows = read_csv(routes)
        assert rheader == ["block_index", "token_index", "proj_q_choice", "proj_k_choice"]
        assert len(rrows) == 2 * 6
        assert (tmp_path / "w.bin").exists() and (tmp_path / "w.json").exists()

    def test_seq_len_regrids(self, tmp_path, tiny_config):
        out = tmp_path / "out.csv"
        proc = run_cli("forward", "--config", tiny_config, "--seq-len", "12",
                       "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        _, rows = read_csv(out)
        assert len(rows) == 12

    def test_reads_input_tokens(self, tmp_path, tiny_config):
        tokens = mat(1, 6, 8)
        path = tmp_path / "in.csv"
        write_tokens_csv(path, tokens)
        a = run_cli("forward", "--config", tiny_config, "--input", str(path))
        b = run_cli("forward", "--config", tiny_config)
        assert a.returncode == 0
        # explicit input must change the output hash vs the seeded default
        assert a.stdout.splitlines()[-1] != b.stdout.splitlines()[-1]

    def test_input_width_mismatch_is_config_error(self, tmp_path, tiny_config):
        path = tmp_path / "in.csv"
        write_tokens_csv(path, mat(2, 6, 5))
        proc = run_cli("forward", "--config", tiny_config, "--input", str(path))
        assert proc.returncode == 2
        assert "error:" in proc.stderr


class TestDumpAttn:
    @pytest.mark.parametrize("impl", ["softmax", "dydila"])
    def test_writes_csv_and_pgm(self, tmp_path, tiny_config, impl):
        base = tmp_path / f"attn_{impl}"
        proc = run_cli("dump-attn", "--config", tiny_config, "--impl", impl,
                       "--query-index", "2", "--out", str(base))
        assert proc.returncode == 0, proc.stderr
        header, rows = read_csv(str(base) + ".csv")
        assert header == ["token_index", "weight"]
        assert len(rows) == 6
        w, h, pixels = read_pgm(str(base) + ".pgm")
        assert (w, h) == (3, 2) and len(pixels) == 6
        if impl == "softmax":
            weights = [float(r[1]) for r in rows]
            assert sum(weights) == pytest.approx(1.0, abs=1e-12)

    def test_block_out_of_range(self, tmp_path, tiny_config):
        proc = run_cli("dump-attn", "--config", tiny_config, "--block", "5",
                       "--out", str(tmp_path / "x"))
        assert proc.returncode == 2


class TestStatsLambda:
    def test_increasing_schedule_means_are_exact(self, tmp_path, tiny_config):
        data = json.loads(open(tiny_config, encoding="utf-8").read())
        data["lambda_schedule"] = "increasing"
        path = tmp_path / "inc.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        out = tmp_path / "stats.csv"
        proc = run_cli("stats-lambda", "--config", str(path), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        header, rows = read_csv(out)
        assert header == ["block_index", "mean_lambda_q", "mean_lambda_k", "mean_lambda_map"]
        # every factor in a block is initialized to the schedule value, so
        # routing cannot move the mean off the endpoint (mean rounding aside)
        assert [r[0] for r in rows] == ["0", "1"]
        for cell in rows[0][1:]:
            assert float(cell) == pytest.approx(0.2, abs=1e-15)
        for cell in rows[1][1:]:
            assert float(cell) == pytest.approx(0.8, abs=1e-15)

    def test_prints_when_no_out(self, tiny_config):
        proc = run_cli("stats-lambda", "--config", tiny_config)
        assert proc.returncode == 0
        assert proc.stdout.splitlines()[0] == "block_index,mean_lambda_q,mean_lambda_k,mean_lambda_map"


class TestFlops:
    def test_csv_totals_match_library(self, tmp_path, tiny_config):
        from dydila.flops import flops_estimate

        out = tmp_path / "flops.csv"
        proc = run_cli("flops", "--config", tiny_config, "--impl", "softmax",
                       "--seq-len", "64,128", "--out", str(out))
        assert proc.returncode == 0
        header, rows = read_csv(out)
        assert header == ["impl", "N", "component", "flops"]
        totals = {r[1]: int(r[3]) for r in rows if r[2] == "total"}
        assert totals["64"] == flops_estimate("softmax", 64, 8)["total"]
        assert totals["128"] == flops_estimate("softmax", 128, 8)["total"]

    def test_prints_without_out(self, tiny_config):
        proc = run_cli("flops", "--config", tiny_config, "--impl", "dydila",
                       "--seq-len", "64")
        assert proc.returncode == 0
        assert proc.stdout.startswith("impl,N,component,flops")
        assert "attention_core" in proc.stdout


class TestBench:
    def test_csv_and_stdout(self, tmp_path, tiny_config):
        out = tmp_path / "bench.csv"
        proc = run_cli("bench", "--config", tiny_config, "--impl", "linear",
                       "--seq-len", "8,16", "--iters", "3", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        assert "linear N=8" in proc.stdout and "linear N=16" in proc.stdout
        header, rows = read_csv(out)
        assert header == ["impl", "N", "d", "heads", "mean_s", "std_s", "flops"]
        assert [r[1] for r in rows] == ["8", "16"]

    def test_bad_seq_len_is_config_error(self, tiny_config):
        proc = run_cli("bench", "--config", tiny_config, "--impl", "linear",
                       "--seq-len", "abc", "--iters", "3")
        assert proc.returncode == 2
        assert "error:" in proc.stderr


class TestErrors:
    def test_broken_config_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        proc = run_cli("check", "--config", str(path))
        assert proc.returncode == 2
        assert "error:" in proc.stderr

    def test_unknown_config_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"preset": "small", "depth": 9}), encoding="utf-8")
        proc = run_cli("forward", "--config", str(path))
        assert proc.returncode == 2
        assert "unknown config field" in proc.stderr

    def test_missing_subcommand_usage_error(self):
        proc = run_cli()
        assert proc.returncode == 2
        assert "usage" in proc.stderr
