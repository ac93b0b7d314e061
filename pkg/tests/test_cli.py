import json
import os

import pytest

from macsat.cli import main


def run_cli(args, tmp_path, name):
    out = tmp_path / name
    code = main(args + ["--output", str(out)])
    text = out.read_text() if out.exists() else ""
    return code, text


class TestThresholdCommand:
    def test_json_record_fields(self, tmp_path):
        code, text = run_cli(
            [
                "threshold",
                "--ensemble",
                "reg36",
                "--ratio",
                "1",
                "--grid-bins",
                "257",
                "--tol",
                "0.05",
                "--no-timestamp",
            ],
            tmp_path,
            "thr.json",
        )
        assert code == 0
        rec = json.loads(text)
        assert {"ensemble", "A", "alpha_bp", "iters", "tol"} <= set(rec)
        assert "config_hash" in rec["meta"]

    def test_deterministic_reruns(self, tmp_path):
        args = [
            "threshold",
            "--ensemble",
            "reg36",
            "--grid-bins",
            "257",
            "--tol",
            "0.05",
            "--no-timestamp",
        ]
        _, t1 = run_cli(args, tmp_path, "a.json")
        _, t2 = run_cli(args, tmp_path, "b.json")
        assert t1 == t2


class TestCapacityCommand:
    def test_csv_layout(self, tmp_path):
        code, text = run_cli(
            ["capacity", "--rates", "0.5,0.5", "--ray-list", "1.0", "--no-timestamp"],
            tmp_path,
            "cap.csv",
        )
        assert code == 0
        lines = [l for l in text.splitlines() if l and not l.startswith("#")]
        assert lines[0] == "h1,h2"
        h1, h2 = (float(t) for t in lines[1].split(","))
        assert h1 == pytest.approx(1.26, abs=0.01)
        assert h2 == pytest.approx(h1)

    def test_infeasible_ray_is_numeric_failure(self, tmp_path):
        code, _ = run_cli(
            ["capacity", "--rates", "0.5,0.5", "--ray-list", "1e-9"], tmp_path, "x.csv"
        )
        assert code == 3


class TestConfigHandling:
    def test_config_file_fills_defaults(self, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text("grid_bins=257\ntol=0.05\n")
        code, text = run_cli(
            ["threshold", "--ensemble", "reg36", "--config", str(cfg), "--no-timestamp"],
            tmp_path,
            "t.json",
        )
        assert code == 0
        assert json.loads(text)["tol"] == 0.05

    def test_flag_beats_config(self, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text("tol=0.2\ngrid_bins=257\n")
        code, text = run_cli(
            ["threshold", "--config", str(cfg), "--tol", "0.05", "--no-timestamp"],
            tmp_path,
            "t.json",
        )
        assert code == 0
        assert json.loads(text)["tol"] == 0.05

    def test_missing_config_file(self, tmp_path):
        assert main(["threshold", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_bad_config_line_reports_position(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("tol=0.1\nnot a pair\n")
        assert main(["threshold", "--config", str(cfg)]) == 2
        assert ":2:" in capsys.readouterr().err

    def test_unknown_ensemble(self, tmp_path):
        assert main(["threshold", "--ensemble", "zzz"]) == 2

    def test_ensemble_file(self, tmp_path):
        ens = tmp_path / "e.cfg"
        ens.write_text("kind=regular\nl=3\nr=6\n")
        code, text = run_cli(
            [
                "threshold",
                "--ensemble",
                str(ens),
                "--grid-bins",
                "257",
                "--tol",
                "0.05",
                "--no-timestamp",
            ],
            tmp_path,
            "t.json",
        )
        assert code == 0


class TestSimulateCommand:
    def test_jsonl_plus_summary(self, tmp_path):
        code, text = run_cli(
            [
                "simulate",
                "--ensemble",
                "reg36",
                "--n",
                "600",
                "--alpha",
                "1.9",
                "--frames",
                "3",
                "--iters",
                "30",
                "--no-timestamp",
            ],
            tmp_path,
            "sim.jsonl",
        )
        assert code == 0
        lines = text.strip().splitlines()
        records = [json.loads(l) for l in lines if not l.startswith("#")]
        assert len(records) == 6  # one line per (frame, user)
        assert {"frame", "user", "bit_errors", "iters", "decoded"} <= set(records[0])
        assert {r["user"] for r in records} == {1, 2}
        summary = json.loads(lines[-1].lstrip("# "))
        assert "ber" in summary and "config_hash" in summary

    def test_seeded_reruns_identical(self, tmp_path):
        args = [
            "simulate",
            "--ensemble",
            "reg36",
            "--n",
            "600",
            "--alpha",
            "1.7",
            "--frames",
            "2",
            "--iters",
            "20",
            "--seed",
            "5",
            "--no-timestamp",
        ]
        _, t1 = run_cli(args, tmp_path, "s1.jsonl")
        _, t2 = run_cli(args, tmp_path, "s2.jsonl")
        assert t1 == t2


class TestGexitCommand:
    def test_csv_columns(self, tmp_path):
        code, text = run_cli(
            [
                "gexit",
                "--ensemble",
                "reg36",
                "--alphas",
                "0:0.4:0.2",
                "--grid-bins",
                "513",
                "--lattice",
                "64",
                "--no-timestamp",
            ],
            tmp_path,
            "g.csv",
        )
        assert code == 0
        rows = [l for l in text.splitlines() if l and not l.startswith("#")]
        assert rows[0] == "alpha,g,branch"
        assert len(rows) == 4
        for row in rows[1:]:
            alpha, g, branch = row.split(",")
            assert branch == "stable"
            assert float(g) <= 1e-6
