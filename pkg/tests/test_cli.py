"""End-to-end command tests on a small dataset: artifact determinism, table
parseability, and error signaling."""

import json
import os

import numpy as np
import pytest

from crossloc.cli import main
from crossloc.experiments import read_tsv
from crossloc.retrieval import RecallTable

CFG = {
    "gen": {"grid_rows": 4, "grid_cols": 6, "seed": 5},
    "train": {"epochs": 2, "batch_size": 8},
    "split": {"ratios": [0.5, 0.25, 0.25], "seed": 0},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(CFG))
    assert main(["gen", "--config", str(cfg_path), "--out", str(root)]) == 0
    assert main(["train", "--config", str(cfg_path), "--data", str(root / "dataset.jsonl"),
                 "--out", str(root / "run"), "--quiet"]) == 0
    return root, cfg_path


class TestGen:
    def test_rerun_byte_identical(self, workdir, tmp_path):
        root, cfg = workdir
        out2 = tmp_path / "again"
        assert main(["gen", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (root / "dataset.jsonl").read_bytes() == (out2 / "dataset.jsonl").read_bytes()

    def test_seed_flag_overrides(self, workdir, tmp_path):
        _, cfg = workdir
        assert main(["gen", "--config", str(cfg), "--seed", "77", "--out", str(tmp_path)]) == 0
        first = (tmp_path / "dataset.jsonl").read_text().splitlines()
        assert any("\"seed\": 77" in l for l in first if l.startswith("#"))


class TestTrainCommand:
    def test_artifacts_exist(self, workdir):
        root, _ = workdir
        assert (root / "run" / "checkpoint_best.bin").exists()
        assert (root / "run" / "history.json").exists()
        history = json.loads((root / "run" / "history.json").read_text())
        assert len(history["epoch_losses"]) == 2
        assert "config_hash" in history

    def test_rerun_byte_identical(self, workdir, tmp_path):
        root, cfg = workdir
        out2 = tmp_path / "run2"
        assert main(["train", "--config", str(cfg), "--data", str(root / "dataset.jsonl"),
                     "--out", str(out2), "--quiet"]) == 0
        for name in ("checkpoint_best.bin", "checkpoint_epoch_01.bin", "history.json"):
            assert (root / "run" / name).read_bytes() == (out2 / name).read_bytes(), name


class TestEvalCommand:
    def test_writes_parseable_tables(self, workdir):
        root, cfg = workdir
        out = root / "eval"
        assert main(["eval", "--config", str(cfg), "--data", str(root / "dataset.jsonl"),
                     "--checkpoint", str(root / "run" / "checkpoint_best.bin"),
                     "--out", str(out), "--align-mode", "oracle"]) == 0
        table = RecallTable.from_tsv((out / "recall.tsv").read_text())
        assert table.ks == (1, 5, 10)
        assert np.all(np.diff(table.values, axis=0) >= -1e-12)
        assert np.all(np.diff(table.values, axis=1) >= -1e-12)
        assert "config_hash=" in (out / "recall.tsv").read_text()
        assert (out / "recall.txt").read_text().startswith("r@1:")

    def test_rerun_byte_identical(self, workdir, tmp_path):
        root, cfg = workdir
        args = ["eval", "--config", str(cfg), "--data", str(root / "dataset.jsonl"),
                "--checkpoint", str(root / "run" / "checkpoint_best.bin"),
                "--align-mode", "ccca", "--shuffle-seed", "3"]
        a, b = tmp_path / "e1", tmp_path / "e2"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert (a / "recall.tsv").read_bytes() == (b / "recall.tsv").read_bytes()

    def test_missing_checkpoint_fails_without_partial_report(self, workdir, tmp_path):
        root, cfg = workdir
        out = tmp_path / "bad"
        code = main(["eval", "--config", str(cfg), "--data", str(root / "dataset.jsonl"),
                     "--checkpoint", str(root / "nope.bin"), "--out", str(out)])
        assert code == 1
        assert not (out / "recall.tsv").exists()


class TestAlignCommand:
    def test_prints_permutation_and_score(self, workdir, capsys):
        root, cfg = workdir
        assert main(["align", "--data", str(root / "dataset.jsonl"),
                     "--checkpoint", str(root / "run" / "checkpoint_best.bin"),
                     "--location", "loc0002", "--shuffle-seed", "4"]) == 0
        out = capsys.readouterr().out
        assert "permutation:" in out and "score:" in out

    def test_unknown_location_fails(self, workdir):
        root, _ = workdir
        assert main(["align", "--data", str(root / "dataset.jsonl"),
                     "--checkpoint", str(root / "run" / "checkpoint_best.bin"),
                     "--location", "nowhere"]) == 1


class TestAblateCommand:
    def test_temperature_axis_writes_table(self, workdir, tmp_path):
        root, cfg = workdir
        out = tmp_path / "ab"
        assert main(["ablate", "temperature", "--config", str(cfg),
                     "--data", str(root / "dataset.jsonl"), "--seeds", "0",
                     "--out", str(out)]) == 0
        header, rows = read_tsv((out / "ablate_temperature.tsv").read_text())
        assert header[:3] == ["axis", "arm", "seed"]
        assert {r[1] for r in rows} == {"learnable", "removed"}

    def test_unknown_axis_fails(self, workdir, tmp_path):
        root, cfg = workdir
        import subprocess, sys
        proc = subprocess.run(
            [sys.executable, "-m", "crossloc.cli", "ablate", "bogus",
             "--data", str(root / "dataset.jsonl"), "--out", str(tmp_path)],
            capture_output=True, text=True)
        assert proc.returncode != 0
