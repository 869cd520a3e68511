import csv
import json

import pytest

from spagnn.cli import main
from spagnn.evaluation import REPORT_COLUMNS


def run(capsys, *argv):
    status = main([str(a) for a in argv])
    out = capsys.readouterr()
    return status, out.out, out.err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "scenes.jsonl"
    assert main(["gen-scenes", "--kind", "mixed", "--count", "6", "--seed", "3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"mode": "forecast", "hidden": 8, "iterations": 3, "batch_size": 2}))
    out = root / "model"
    assert main(["train", "--data", str(dataset), "--config", str(cfg), "--variant", "full", "--out", str(out)]) == 0
    return out


class TestGenScenes:
    def test_hundred_records(self, tmp_path, capsys):
        out = tmp_path / "f.jsonl"
        status, stdout, _ = run(capsys, "gen-scenes", "--kind", "following", "--count", 100, "--seed", 7, "--out", out)
        assert status == 0
        assert len(out.read_text().splitlines()) == 100
        manifest = json.loads((tmp_path / "f.manifest.json").read_text())
        assert manifest["command"] == "gen-scenes" and manifest["seed"] == 7

    def test_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run(capsys, "gen-scenes", "--count", 5, "--seed", 1, "--out", a)
        run(capsys, "gen-scenes", "--count", 5, "--seed", 1, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen-scenes", "--count", "1", "--out", "x", "--bogus"])
        assert exc.value.code != 0


class TestTrainEval:
    def test_train_artifacts(self, trained):
        assert (trained / "checkpoint.bin").read_bytes()[:7] == b"SPAGNN1"
        assert (trained / "loss_trace.csv").read_text().startswith("step,cls,reg,nll,total\n")
        manifest = json.loads((trained / "manifest.json").read_text())
        assert manifest["config"]["train"]["variant"] == "full"
        assert manifest["config"]["model"]["hidden"] == 8

    def test_train_deterministic(self, dataset, trained, tmp_path, capsys):
        cfg = trained.parent / "cfg.json"
        status, _, _ = run(capsys, "train", "--data", dataset, "--config", cfg, "--variant", "full", "--out", tmp_path / "again")
        assert status == 0
        assert (tmp_path / "again" / "checkpoint.bin").read_bytes() == (trained / "checkpoint.bin").read_bytes()

    def test_eval_report(self, dataset, trained, tmp_path, capsys):
        out = tmp_path / "report.csv"
        status, stdout, _ = run(capsys, "eval", "--data", dataset, "--checkpoint", trained / "checkpoint.bin", "--recall", 0.8, "--out", out)
        assert status == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == list(REPORT_COLUMNS)
        assert [float(r["horizon_s"]) for r in rows] == [0.0, 1.0, 3.0]
        assert all(r[c] not in ("", "nan") for r in rows for c in REPORT_COLUMNS)
        assert (tmp_path / "report.pr.csv").exists() and (tmp_path / "report.rollouts.json").exists()

        svg = tmp_path / "plot.svg"
        status, _, _ = run(capsys, "plot", "--eval-csv", out, "--out", svg)
        assert status == 0
        text = svg.read_text()
        assert text.startswith("<svg") and "<ellipse" in text and "<polyline" in text
        again = tmp_path / "plot2.svg"
        run(capsys, "plot", "--eval-csv", out, "--out", again)
        assert again.read_text() == text

    def test_missing_data(self, tmp_path, capsys):
        status, _, err = run(capsys, "train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "o")
        assert status == 1 and "dataset not found" in err

    def test_missing_checkpoint(self, dataset, tmp_path, capsys):
        status, _, err = run(capsys, "eval", "--data", dataset, "--checkpoint", tmp_path / "x.bin", "--out", tmp_path / "r.csv")
        assert status == 1 and "checkpoint not found" in err

    def test_bad_config_key(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"learning_rate": 1}')
        status, _, err = run(capsys, "train", "--data", dataset, "--config", cfg, "--out", tmp_path / "o")
        assert status == 1 and "unknown config keys" in err

    def test_unreachable_recall(self, dataset, trained, tmp_path, capsys):
        status, _, err = run(capsys, "eval", "--data", dataset, "--checkpoint", trained / "checkpoint.bin", "--recall", 1.5, "--out", tmp_path / "r.csv")
        assert status == 1 and "maximum achievable recall" in err


class TestAblate:
    def test_all_variants(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"mode": "forecast", "hidden": 8, "iterations": 2, "batch_size": 2}))
        status, stdout, _ = run(capsys, "ablate", "--data", dataset, "--config", cfg, "--out", tmp_path / "abl", "--holdout", 0.5)
        assert status == 0
        with open(tmp_path / "abl" / "ablation.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert sorted({r["variant"] for r in rows}) == sorted(["mlp", "gnn_plain", "gnn_global_box", "gnn_relative_box", "full"])
        assert len(rows) == 15


class TestChecks:
    def test_gabp_check(self, capsys):
        status, stdout, _ = run(capsys, "gabp-check", "--nodes", 6, "--trials", 50, "--seed", 1)
        assert status == 0
        line = next(l for l in stdout.splitlines() if l.startswith("max mean deviation"))
        assert float(line.split()[-1]) < 1e-8

    def test_grad_check(self, capsys):
        status, stdout, _ = run(capsys, "grad-check", "--seeds", 1)
        assert status == 0
        assert "end_to_end" in stdout and "FAIL" not in stdout
