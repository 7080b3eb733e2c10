import json

import numpy as np
import pytest
from click.testing import CliRunner

from ktfm.cli import main
from ktfm.sparse import load_design_matrix
from tests.conftest import EXAMPLE_ENCODED


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestSynthCommand:
    def test_writes_files_and_manifest(self, runner, tmp_path):
        out = tmp_path / "synth"
        invoke(
            runner,
            [
                "synth", "--generator", "pfa", "--students", "6", "--items", "4",
                "--skills", "2", "--seed", "3", "--out-dir", str(out),
            ],
        )
        assert (out / "triplets.csv").exists()
        assert (out / "qmatrix.csv").exists()
        assert (out / "truth.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "synth"

    def test_identical_seeds_identical_outputs(self, runner, tmp_path):
        args = [
            "synth", "--generator", "rasch", "--students", "5", "--items", "3",
            "--seed", "9",
        ]
        invoke(runner, args + ["--out-dir", str(tmp_path / "a")])
        invoke(runner, args + ["--out-dir", str(tmp_path / "b")])
        for name in ("triplets.csv", "truth.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestEncodeCommand:
    def test_pfa_encoding_matches_hand_computed_table(self, runner, example_log_csv, tmp_path):
        data, qfile = example_log_csv
        out = tmp_path / "dm.txt"
        invoke(
            runner,
            [
                "encode", "--data", str(data), "--qmatrix", str(qfile),
                "--preset", "pfa", "--out", str(out),
            ],
        )
        dm = load_design_matrix(out)
        got = dm.densify()
        # dense ids follow first appearance (student "2" first, item "2"
        # first), so reorder the hand-computed table's rows accordingly
        expected = np.hstack(
            [EXAMPLE_ENCODED[:, 5:8], EXAMPLE_ENCODED[:, 8:11], EXAMPLE_ENCODED[:, 11:14]]
        )
        assert np.array_equal(got, expected)
        assert (tmp_path / "dm.manifest.json").exists()

    def test_incompatible_preset_fails(self, runner, example_log_csv, tmp_path):
        data, _ = example_log_csv
        result = runner.invoke(
            main,
            ["encode", "--data", str(data), "--preset", "pfa", "--out", str(tmp_path / "x.txt")],
        )
        assert result.exit_code != 0
        assert "q-matrix" in result.output


class TestTrainPredictEvaluate:
    @pytest.fixture
    def synth_dir(self, runner, tmp_path):
        out = tmp_path / "synth"
        invoke(
            runner,
            [
                "synth", "--generator", "rasch", "--students", "20", "--items", "8",
                "--seed", "5", "--out-dir", str(out),
            ],
        )
        return out

    def test_full_cycle_logit(self, runner, synth_dir, tmp_path):
        model = tmp_path / "model.json"
        vocab = tmp_path / "vocab.json"
        log = tmp_path / "log.csv"
        invoke(
            runner,
            [
                "train", "--data", str(synth_dir / "triplets.csv"),
                "--preset", "irt", "--link", "logit", "--epochs", "30",
                "--seed", "1", "--out", str(model), "--vocab-out", str(vocab),
                "--log", str(log),
            ],
        )
        assert model.exists() and vocab.exists()
        assert log.read_text().splitlines()[0] == "epoch,train_nll"

        preds = tmp_path / "preds.csv"
        invoke(
            runner,
            [
                "predict", "--model", str(model), "--data", str(synth_dir / "triplets.csv"),
                "--vocab", str(vocab), "--out", str(preds),
            ],
        )
        lines = preds.read_text().splitlines()
        assert lines[0] == "row,proba"
        values = [float(line.split(",")[1]) for line in lines[1:]]
        assert len(values) == 160
        assert all(0.0 < v < 1.0 for v in values)

        metrics = tmp_path / "metrics.csv"
        result = invoke(
            runner,
            [
                "evaluate", "--model", str(model), "--data", str(synth_dir / "triplets.csv"),
                "--vocab", str(vocab), "--out", str(metrics),
            ],
        )
        assert "acc=" in result.output and "auc=" in result.output
        header, row = metrics.read_text().splitlines()
        assert header == "acc,auc,nll"

    def test_train_probit_gibbs(self, runner, synth_dir, tmp_path):
        model = tmp_path / "model.json"
        invoke(
            runner,
            [
                "train", "--data", str(synth_dir / "triplets.csv"),
                "--preset", "mirtb", "--d", "2", "--link", "probit",
                "--iters", "20", "--seed", "2", "--out", str(model),
            ],
        )
        payload = json.loads(model.read_text())
        assert payload["link"] == "probit"
        assert payload["d"] == 2

    def test_identical_train_runs_byte_identical_models(self, runner, synth_dir, tmp_path):
        args = [
            "train", "--data", str(synth_dir / "triplets.csv"), "--preset", "mirtb",
            "--d", "2", "--epochs", "10", "--seed", "3",
        ]
        invoke(runner, args + ["--out", str(tmp_path / "m1.json")])
        invoke(runner, args + ["--out", str(tmp_path / "m2.json")])
        assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    def test_predict_rejects_wrong_vocab(self, runner, synth_dir, tmp_path):
        model = tmp_path / "model.json"
        vocab = tmp_path / "vocab.json"
        invoke(
            runner,
            [
                "train", "--data", str(synth_dir / "triplets.csv"), "--preset", "irt",
                "--epochs", "2", "--out", str(model), "--vocab-out", str(vocab),
            ],
        )
        other = tmp_path / "other_vocab.json"
        other.write_text('{"users":{"x":0},"items":{"y":0},"extras":{}}')
        result = runner.invoke(
            main,
            [
                "predict", "--model", str(model), "--data", str(synth_dir / "triplets.csv"),
                "--vocab", str(other), "--out", str(tmp_path / "p.csv"),
            ],
        )
        assert result.exit_code != 0
        assert "digest" in result.output


class TestCvCommand:
    def test_smoke_single_cell(self, runner, tmp_path):
        synth = tmp_path / "synth"
        invoke(
            runner,
            [
                "synth", "--generator", "rasch", "--students", "15", "--items", "6",
                "--seed", "4", "--out-dir", str(synth),
            ],
        )
        out = tmp_path / "cv"
        result = invoke(
            runner,
            [
                "cv", "--data", str(synth / "triplets.csv"), "--preset", "irt",
                "--d", "0", "--folds", "5", "--seed", "42", "--epochs", "10",
                "--out-dir", str(out),
            ],
        )
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "preset,d,acc,auc,nll"
        assert len(summary) == 2
        report = (out / "report.csv").read_text().splitlines()
        assert len(report) == 6  # header + 5 folds
        assert "irt" in result.output

    def test_identical_seeds_byte_identical_reports(self, runner, tmp_path):
        synth = tmp_path / "synth"
        invoke(
            runner,
            [
                "synth", "--generator", "rasch", "--students", "12", "--items", "5",
                "--seed", "8", "--out-dir", str(synth),
            ],
        )
        args = [
            "cv", "--data", str(synth / "triplets.csv"), "--preset", "irt",
            "--d", "0", "--folds", "3", "--seed", "7", "--epochs", "8",
        ]
        invoke(runner, args + ["--out-dir", str(tmp_path / "r1")])
        invoke(runner, args + ["--out-dir", str(tmp_path / "r2")])
        assert (tmp_path / "r1" / "report.csv").read_bytes() == (tmp_path / "r2" / "report.csv").read_bytes()
        assert (tmp_path / "r1" / "summary.csv").read_bytes() == (tmp_path / "r2" / "summary.csv").read_bytes()


class TestExportEmbeddings:
    def test_export_after_training(self, runner, tmp_path):
        synth = tmp_path / "synth"
        invoke(
            runner,
            [
                "synth", "--generator", "rasch", "--students", "8", "--items", "4",
                "--seed", "6", "--out-dir", str(synth),
            ],
        )
        model = tmp_path / "model.json"
        invoke(
            runner,
            [
                "train", "--data", str(synth / "triplets.csv"), "--preset", "mirtb",
                "--d", "2", "--epochs", "5", "--out", str(model),
            ],
        )
        out = tmp_path / "emb.csv"
        invoke(runner, ["export-embeddings", "--model", str(model), "--out", str(out)])
        lines = out.read_text().splitlines()
        assert lines[0] == "block,local_id,bias,v0,v1"
        assert len(lines) == 13  # 8 users + 4 items + header


class TestErrors:
    def test_unknown_preset_message(self, runner, tmp_path, example_log_csv):
        data, _ = example_log_csv
        result = runner.invoke(
            main, ["encode", "--data", str(data), "--preset", "dkt", "--out", str(tmp_path / "x")]
        )
        assert result.exit_code != 0
        assert "unknown preset" in result.output

    def test_missing_file(self, runner, tmp_path):
        result = runner.invoke(
            main, ["encode", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x")]
        )
        assert result.exit_code != 0
