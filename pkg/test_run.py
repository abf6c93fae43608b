"""
Command-line tests
Drive run.main end to end on small synthetic data and check outputs and exit codes
"""
import json

import numpy as np
import pandas as pd
import pytest

from exceptions import UsageError
from run import main, parse_seeds

SMALL = ["--epochs", "3", "--batch-size", "20", "--batches-per-epoch", "2", "--embed-dim", "4", "--hidden", "8",
         "--lr", "0.01"]


def _run(capsys, *argv):
    code = main(["--log-dir", "", *argv])
    out = capsys.readouterr().out
    return code, out


def _last_json(out):
    return json.loads(out.strip().splitlines()[-1])


@pytest.fixture
def blobs_csv(tmp_path, capsys):
    data, truth = tmp_path / "blobs.csv", tmp_path / "truth.txt"
    code, out = _run(capsys, "blobs", "--n-per-cluster", "10", "--k", "3", "--dim", "5", "--seed", "1",
                     "--out", str(data), "--truth-out", str(truth))
    assert code == 0
    assert _last_json(out)["n"] == 30
    return data, truth


@pytest.fixture
def trained(tmp_path, capsys, blobs_csv):
    data, _ = blobs_csv
    run_dir = tmp_path / "run"
    code, out = _run(capsys, "train", "--data", str(data), "--label-column", "-1", "--out", str(run_dir), *SMALL)
    assert code == 0
    return run_dir, _last_json(out)


class TestBlobs:
    def test_truth_file_matches_label_column(self, blobs_csv):
        data, truth = blobs_csv
        frame = pd.read_csv(data, header=None)
        assert frame.shape == (30, 6)
        labels = [int(line) for line in truth.read_text().split()]
        assert labels == frame.iloc[:, -1].tolist()


class TestTrain:
    def test_artifacts(self, trained):
        run_dir, summary = trained
        for name in ("model.ckpt", "trace.csv", "config.json", "report.md", "report.html"):
            assert (run_dir / name).exists(), name
        assert summary["epochs"] == 3
        assert json.loads((run_dir / "config.json").read_text())["encoder_hidden"] == [8]
        assert len(pd.read_csv(run_dir / "trace.csv")) == 3

    def test_seeded_runs_reproduce(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        traces = []
        for name in ("a", "b"):
            code, _ = _run(capsys, "train", "--data", str(data), "--label-column", "-1",
                           "--out", str(tmp_path / name), *SMALL)
            assert code == 0
            traces.append(pd.read_csv(tmp_path / name / "trace.csv").drop(columns=["wall_time"]))
        pd.testing.assert_frame_equal(traces[0], traces[1])
        assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()

    def test_config_file_and_flag_precedence(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        config = tmp_path / "run.env"
        config.write_text("EPOCHS=1\nGAMMA=0.5\n")
        code, _ = _run(capsys, "train", "--data", str(data), "--label-column", "-1", "--config", str(config),
                       "--out", str(tmp_path / "c"), *SMALL)
        assert code == 0
        saved = json.loads((tmp_path / "c" / "config.json").read_text())
        assert (saved["epochs"], saved["gamma"]) == (3, 0.5)

    def test_unknown_config_key(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        config = tmp_path / "bad.env"
        config.write_text("MOMENTUM=0.9\n")
        code, _ = _run(capsys, "train", "--data", str(data), "--config", str(config), "--out", str(tmp_path / "d"))
        assert code == 1

    def test_missing_data_file(self, tmp_path, capsys):
        code, _ = _run(capsys, "train", "--data", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "e"))
        assert code == 2

    def test_bad_cell_exit_code(self, tmp_path, capsys):
        data = tmp_path / "bad.csv"
        data.write_text("1,2\n3,oops\n")
        code, _ = _run(capsys, "train", "--data", str(data), "--out", str(tmp_path / "f"))
        assert code == 2
        assert not (tmp_path / "f" / "model.ckpt").exists()

    def test_single_row_is_a_data_error(self, tmp_path, capsys):
        data = tmp_path / "one.csv"
        data.write_text("0.1,0.2,0.3\n")
        code, _ = _run(capsys, "train", "--data", str(data), "--out", str(tmp_path / "g"), *SMALL)
        assert code == 2

    def test_margin_above_one_is_a_usage_error(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        code, _ = _run(capsys, "train", "--data", str(data), "--out", str(tmp_path / "h"), "--margin", "1.5", *SMALL)
        assert code == 1

    def test_radius_flags(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        code, _ = _run(capsys, "train", "--data", str(data), "--label-column", "-1", "--out", str(tmp_path / "r"),
                       "--radius", "0.4", "--radius-start", "0.2", "--radius-warmup", "2", *SMALL)
        assert code == 0
        saved = json.loads((tmp_path / "r" / "config.json").read_text())
        assert (saved["embed_radius"], saved["embed_radius_start"], saved["radius_warmup"]) == (0.4, 0.2, 2)
        trace = pd.read_csv(tmp_path / "r" / "trace.csv")
        assert trace["radius"].tolist() == pytest.approx([0.2, 0.3, 0.4])


class TestGraphClusterEval:
    def test_pipeline(self, tmp_path, capsys, blobs_csv, trained):
        data, truth = blobs_csv
        run_dir, _ = trained
        affinity = tmp_path / "y.csv"
        code, _ = _run(capsys, "graph", "--checkpoint", str(run_dir / "model.ckpt"), "--data", str(data),
                       "--label-column", "-1", "--out", str(affinity))
        assert code == 0
        y = pd.read_csv(affinity, header=None).to_numpy()
        assert y.shape == (30, 30)
        np.testing.assert_array_equal(y, y.T)
        np.testing.assert_array_equal(np.diag(y), 1.0)

        labels = tmp_path / "labels.txt"
        code, out = _run(capsys, "cluster", "--affinity", str(affinity), "--k", "3", "--method", "sc-y",
                         "--out", str(labels))
        assert code == 0
        assert _last_json(out)["method"] == "sc-y"
        assert len(labels.read_text().split()) == 30

        metrics = tmp_path / "metrics.jsonl"
        code, out = _run(capsys, "eval", "--labels", str(labels), "--truth", str(truth), "--method", "sc-y",
                         "--metrics-out", str(metrics))
        assert code == 0
        record = _last_json(out)
        assert 0.0 <= record["acc"] <= 1.0 and 0.0 <= record["nmi"] <= 1.0
        assert json.loads(metrics.read_text().splitlines()[0]) == record

    def test_cluster_raw_features(self, tmp_path, capsys, blobs_csv):
        data, truth = blobs_csv
        labels = tmp_path / "km.txt"
        code, _ = _run(capsys, "cluster", "--data", str(data), "--label-column", "-1", "--k", "3",
                       "--method", "km-z", "--out", str(labels))
        assert code == 0
        code, out = _run(capsys, "eval", "--labels", str(labels), "--truth", str(truth))
        assert _last_json(out)["acc"] == 1.0

    def test_affinity_only_feeds_sc_y(self, tmp_path, capsys):
        affinity = tmp_path / "y.csv"
        affinity.write_text("1,0\n0,1\n")
        code, _ = _run(capsys, "cluster", "--affinity", str(affinity), "--k", "2", "--method", "km-z",
                       "--out", str(tmp_path / "l.txt"))
        assert code == 1

    def test_unknown_method(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        code, _ = _run(capsys, "cluster", "--data", str(data), "--k", "3", "--method", "dbscan",
                       "--out", str(tmp_path / "l.txt"))
        assert code == 1

    def test_eval_length_mismatch(self, tmp_path, capsys):
        (tmp_path / "a.txt").write_text("0\n1\n")
        (tmp_path / "b.txt").write_text("0\n")
        code, _ = _run(capsys, "eval", "--labels", str(tmp_path / "a.txt"), "--truth", str(tmp_path / "b.txt"))
        assert code == 2

    def test_checkpoint_dimension_mismatch(self, tmp_path, capsys, trained):
        run_dir, _ = trained
        data = tmp_path / "narrow.csv"
        data.write_text("0.1,0.2\n0.3,0.4\n")
        code, _ = _run(capsys, "graph", "--checkpoint", str(run_dir / "model.ckpt"), "--data", str(data),
                       "--out", str(tmp_path / "y.csv"))
        assert code == 2


class TestSelftestCommand:
    def test_subset_passes(self, capsys):
        code, out = _run(capsys, "selftest", "--only", "maclaurin_convergence")
        assert code == 0
        assert out.strip().splitlines()[-1] == "all checks passed"

    def test_unknown_check(self, capsys):
        code, _ = _run(capsys, "selftest", "--only", "nope")
        assert code == 1


class TestAblate:
    def test_small_ablation(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        out_dir = tmp_path / "ablation"
        code, out = _run(capsys, "ablate", "--data", str(data), "--label-column", "-1", "--seeds", "0",
                         "--out", str(out_dir), *SMALL)
        assert code == 0
        records = [json.loads(line) for line in out.strip().splitlines()]
        assert len(records) == 8
        assert {(r["features"], r["method"]) for r in records} >= {("surface", "km-z"), ("ahcl", "sc-y")}
        summary = pd.read_csv(out_dir / "summary.csv")
        assert summary["features"].tolist()[:2] == ["surface", "surface"]
        assert (out_dir / "ablation.md").exists()
        assert len((out_dir / "metrics.jsonl").read_text().splitlines()) == 8

    def test_needs_labels(self, tmp_path, capsys, blobs_csv):
        data, _ = blobs_csv
        code, _ = _run(capsys, "ablate", "--data", str(data), "--seeds", "0", "--out", str(tmp_path / "x"), *SMALL)
        assert code == 2


class TestParsing:
    @pytest.mark.parametrize("text, expected", [("0-3", [0, 1, 2, 3]), ("0,3,7", [0, 3, 7]), ("5", [5])])
    def test_parse_seeds(self, text, expected):
        assert parse_seeds(text) == expected

    def test_bad_seeds(self):
        with pytest.raises(UsageError):
            parse_seeds("a-b")

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as caught:
            main(["frobnicate"])
        assert caught.value.code == 1

    def test_bad_flag_value(self, capsys):
        with pytest.raises(SystemExit) as caught:
            main(["--log-dir", "", "blobs", "--k", "three", "--out", "x.csv"])
        assert caught.value.code == 1
