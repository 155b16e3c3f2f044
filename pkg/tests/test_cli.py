"""Command-line interface: all five subcommands, exit codes, artifacts."""

import json

import numpy as np
import pytest

from patchshift.cli import DATA_ERROR, OUT_DIR_ENV, USAGE_ERROR, main
from patchshift.data import load_dataset
from patchshift.model import load_checkpoint
from patchshift.oracle import COMPLEXITY_KINDS


def run_config(tmp_path, **extra):
    """A tiny but complete run config; trains in well under a second."""
    config = {
        "task": {"task": "reversal2", "frames": 4, "height": 8, "width": 8,
                 "train_count": 4, "val_count": 2},
        "model": {"depth": 2, "dim": 8, "heads": 2, "window": [2, 2],
                  "pattern": "bayerA", "variant": "patch_only",
                  "tubelet_t": 1, "tubelet_s": 4},
        "train": {"epochs": 2, "batch": 2, "lr": 0.05, "momentum": 0.9},
        "seed": 3,
        "out_dir": str(tmp_path / "out"),
    }
    config.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    return path


class TestPattern:
    def test_prints_grid_and_metrics(self, capsys):
        assert main(["pattern", "bayerA"]) == 0
        out = capsys.readouterr().out
        assert "pattern bayerA (2x2)" in out
        assert "hash" in out
        assert "receptive_field: 3" in out
        assert "shift_pct: 0.5" in out
        assert "evenness: 0" in out

    def test_tiled_grid(self, capsys):
        assert main(["pattern", "bayerA", "--grid", "4x4"]) == 0
        rows = [l for l in capsys.readouterr().out.splitlines()
                if l.startswith("  ")]
        assert len(rows) == 4
        assert rows[0].split() == ["0", "-1", "0", "-1"]

    def test_pattern_file(self, capsys, tmp_path):
        src = tmp_path / "mine.txt"
        src.write_text("2 2\n0 -1\n1 0\n")
        assert main(["pattern", str(src)]) == 0
        assert "pattern mine (2x2)" in capsys.readouterr().out

    def test_unknown_pattern_is_usage_error(self, capsys):
        assert main(["pattern", "nosuch"]) == USAGE_ERROR
        assert "error:" in capsys.readouterr().err

    def test_bad_grid_is_usage_error(self, capsys):
        assert main(["pattern", "bayerA", "--grid", "4by4"]) == USAGE_ERROR

    def test_render_pgm(self, capsys, tmp_path):
        out = tmp_path / "grid.pgm"
        assert main(["pattern", "bayerA", "--render", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "P2"
        assert lines[1] == "2 2"
        assert lines[2] == "255"
        # offsets -1..1 map linearly onto 0..255
        assert lines[3].split() == ["127", "0"]
        assert lines[4].split() == ["255", "127"]


class TestGenData:
    def test_writes_sidecar_and_blob(self, capsys, tmp_path):
        stem = tmp_path / "clips"
        code = main(["gen-data", "--task", "reversal2", "--out", str(stem),
                     "--frames", "4", "--size", "8", "--train", "4", "--val", "2",
                     "--seed", "5"])
        assert code == 0
        assert "6 samples" in capsys.readouterr().out
        spec, seed, samples = load_dataset(stem)
        assert seed == 5 and len(samples) == 6
        assert spec.frames == 4 and spec.height == 8

    def test_same_seed_same_bytes(self, tmp_path):
        args = ["gen-data", "--out", None, "--frames", "4", "--size", "8",
                "--train", "4", "--val", "2", "--seed", "9"]
        blobs = []
        for stem in (tmp_path / "a", tmp_path / "b"):
            args[2] = str(stem)
            assert main(args) == 0
            blobs.append(stem.with_suffix(".bin").read_bytes())
        assert blobs[0] == blobs[1]

    def test_bad_count_is_usage_error(self, capsys, tmp_path):
        code = main(["gen-data", "--out", str(tmp_path / "x"), "--train", "7"])
        assert code == USAGE_ERROR

    def test_impossible_geometry_is_data_error(self, capsys, tmp_path):
        code = main(["gen-data", "--out", str(tmp_path / "x"), "--frames", "8",
                     "--size", "8", "--train", "4", "--val", "2"])
        assert code == DATA_ERROR
        assert "too small" in capsys.readouterr().err


class TestRun:
    def test_trains_and_writes_artifacts(self, capsys, tmp_path):
        cfg = run_config(tmp_path)
        assert main(["run", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "run complete: 2 epochs" in out

        csv = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
        assert csv[0].startswith("# config:")
        assert csv[1].startswith("# pattern_hash:")
        assert csv[2] == "epoch,train_loss,val_top1"
        assert len(csv) == 3 + 2  # two epoch rows

        model = load_checkpoint(tmp_path / "out" / "model.ckpt")
        assert model.config.dim == 8

    def test_same_seed_same_csv_bytes(self, tmp_path):
        a = run_config(tmp_path, out_dir=str(tmp_path / "o1"))
        assert main(["run", str(a)]) == 0
        b = run_config(tmp_path, out_dir=str(tmp_path / "o2"))
        assert main(["run", str(b)]) == 0
        assert (tmp_path / "o1" / "metrics.csv").read_bytes() == \
               (tmp_path / "o2" / "metrics.csv").read_bytes()

    def test_dotted_overrides(self, capsys, tmp_path):
        cfg = run_config(tmp_path)
        assert main(["run", str(cfg), "--train.epochs", "3",
                     "--model.pattern=none"]) == 0
        assert "3 epochs" in capsys.readouterr().out
        csv = (tmp_path / "out" / "metrics.csv").read_text()
        assert '"pattern": "none"' in csv.splitlines()[0]

    def test_out_dir_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "envout"))
        cfg = run_config(tmp_path, out_dir=None)
        assert main(["run", str(cfg)]) == 0
        assert (tmp_path / "envout" / "metrics.csv").exists()

    def test_unknown_section_is_usage_error(self, capsys, tmp_path):
        cfg = run_config(tmp_path, optimizer={"name": "sgd"})
        assert main(["run", str(cfg)]) == USAGE_ERROR
        assert "unknown config sections" in capsys.readouterr().err

    def test_unknown_train_key_is_usage_error(self, capsys, tmp_path):
        cfg = run_config(tmp_path, train={"epochs": 1, "weight_decay": 0.1})
        assert main(["run", str(cfg)]) == USAGE_ERROR

    def test_model_task_mismatch_is_data_error(self, capsys, tmp_path):
        cfg = run_config(tmp_path)
        assert main(["run", str(cfg), "--model.frames", "8"]) == DATA_ERROR

    def test_missing_config_is_usage_error(self, capsys, tmp_path):
        assert main(["run", str(tmp_path / "absent.json")]) == USAGE_ERROR

    def test_bad_override_is_usage_error(self, capsys, tmp_path):
        cfg = run_config(tmp_path)
        assert main(["run", str(cfg), "train.lr", "0.1"]) == USAGE_ERROR


class TestEval:
    @pytest.fixture()
    def artifacts(self, tmp_path):
        cfg = run_config(tmp_path)
        assert main(["run", str(cfg)]) == 0
        stem = tmp_path / "clips"
        assert main(["gen-data", "--task", "reversal2", "--out", str(stem),
                     "--frames", "4", "--size", "8", "--train", "4", "--val", "2",
                     "--seed", "3"]) == 0
        return tmp_path / "out" / "model.ckpt", stem

    def test_reports_top1_json(self, capsys, artifacts):
        ckpt, stem = artifacts
        capsys.readouterr()  # drop fixture output
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(stem)]) == 0
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert report["split"] == "val" and report["count"] == 2
        assert 0.0 <= report["top1"] <= 1.0

    def test_train_split(self, capsys, artifacts):
        ckpt, stem = artifacts
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(stem),
                     "--split", "train"]) == 0
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert report["count"] == 4

    def test_missing_checkpoint_is_usage_error(self, capsys, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "no.ckpt"),
                     "--data", str(tmp_path / "no")]) == USAGE_ERROR

    def test_shape_mismatch_is_data_error(self, capsys, artifacts, tmp_path):
        ckpt, _ = artifacts
        other = tmp_path / "big"
        assert main(["gen-data", "--out", str(other), "--frames", "8",
                     "--size", "16", "--train", "4", "--val", "2"]) == 0
        assert main(["eval", "--checkpoint", str(ckpt),
                     "--data", str(other)]) == DATA_ERROR


class TestComplexity:
    def test_table_lists_all_kinds(self, capsys):
        assert main(["complexity", "--N", "16", "--T", "4", "--D", "8"]) == 0
        out = capsys.readouterr().out
        for kind in COMPLEXITY_KINDS:
            assert kind in out

    def test_json_output(self, capsys):
        assert main(["complexity", "--N", "16", "--T", "4", "--D", "8",
                     "--window", "2x2", "--json"]) == 0
        reports = json.loads(capsys.readouterr().out)
        assert [r["kind"] for r in reports] == list(COMPLEXITY_KINDS)
        ps = next(r for r in reports if r["kind"] == "patchshift")
        assert ps["window"] == [2, 2]
        joint = next(r for r in reports if r["kind"] == "joint")
        assert joint["buffer_elements"] == ps["buffer_elements"] * 4 * 4

    def test_measure_agrees_with_estimate(self, capsys):
        assert main(["complexity", "--N", "4", "--T", "2", "--D", "8",
                     "--heads", "2", "--window", "2x2", "--measure"]) == 0
        assert "measured == estimate" in capsys.readouterr().out

    def test_measure_needs_square_grid(self, capsys):
        assert main(["complexity", "--N", "6", "--T", "2", "--D", "8",
                     "--measure"]) == DATA_ERROR

    def test_bad_window_is_usage_error(self, capsys):
        assert main(["complexity", "--N", "16", "--T", "4", "--D", "8",
                     "--window", "two"]) == USAGE_ERROR

    def test_bad_alpha_is_usage_error(self, capsys):
        assert main(["complexity", "--N", "16", "--T", "4", "--D", "8",
                     "--alpha", "0"]) == USAGE_ERROR
