import csv
import subprocess
import sys

import numpy as np
import pytest

from decs import checkpoint
from decs.autoencoder import Autoencoder
from decs.cli import main, read_config_file
from decs.data import load_csv, write_idx_images, write_idx_labels


def rows(path):
    with open(path) as f:
        return list(csv.reader(f))


@pytest.fixture
def blobs_csv(tmp_path):
    path = tmp_path / "blobs.csv"
    assert main(["synth", "--k", "3", "--per-cluster", "40", "--dim", "5", "--seed", "1",
                 "--out", str(path)]) == 0
    return path


@pytest.fixture
def pretrained(tmp_path, blobs_csv):
    out = tmp_path / "pre"
    assert main(["pretrain", "--data", str(blobs_csv), "--has-labels", "--hidden-dims", "8",
                 "--latent-dim", "3", "--epochs", "3", "--batch-size", "32",
                 "--out-dir", str(out)]) == 0
    return out


def cluster_args(blobs_csv, pretrained, out, *extra):
    return ["cluster", "--data", str(blobs_csv), "--has-labels",
            "--checkpoint", str(pretrained / "checkpoint.decs"), "--k", "3",
            "--batch-size", "32", "--out-dir", str(out), *extra]


class TestSynth:
    def test_shape(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["synth", "--k", "4", "--per-cluster", "500", "--dim", "16",
                     "--out", str(out)]) == 0
        table = rows(out)
        assert len(table) == 2000 and {len(r) for r in table} == {17}

    def test_seeded_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            main(["synth", "--k", "2", "--per-cluster", "5", "--seed", "3", "--out", str(path)])
        assert a.read_bytes() == b.read_bytes()

    def test_zero_sigma_duplicates(self, tmp_path):
        out = tmp_path / "s.csv"
        main(["synth", "--k", "2", "--per-cluster", "5", "--dim", "3", "--sigma", "0",
              "--out", str(out)])
        ds = load_csv(out, has_label_column=True)
        for j in range(2):
            assert len(np.unique(ds.features[ds.truth == j], axis=0)) == 1

    def test_invalid_spec(self, tmp_path):
        assert main(["synth", "--k", "0", "--out", str(tmp_path / "x.csv")]) == 2


class TestPretrain:
    def test_outputs(self, pretrained):
        for name in ("checkpoint.decs", "pretrain_loss.csv", "manifest.json", "run.conf"):
            assert (pretrained / name).is_file()
        assert len(rows(pretrained / "pretrain_loss.csv")) == 1 + 3

    def test_zero_epochs_is_initialization(self, tmp_path, blobs_csv):
        out = tmp_path / "p0"
        assert main(["pretrain", "--data", str(blobs_csv), "--has-labels", "--hidden-dims", "8",
                     "--latent-dim", "3", "--epochs", "0", "--seed", "4",
                     "--out-dir", str(out)]) == 0
        arrays = checkpoint.load(out / "checkpoint.decs")
        init = Autoencoder.build(5, (8,), 3, seed=4).to_arrays()
        assert list(arrays) == list(init)
        for name in init:
            np.testing.assert_array_equal(arrays[name], init[name])

    def test_replay_gives_identical_checkpoint(self, tmp_path, pretrained):
        out = tmp_path / "replay"
        assert main(["pretrain", "--config", str(pretrained / "run.conf"),
                     "--out-dir", str(out)]) == 0
        assert (out / "checkpoint.decs").read_bytes() == (pretrained / "checkpoint.decs").read_bytes()

    def test_missing_data(self, tmp_path):
        out = tmp_path / "nothing"
        assert main(["pretrain", "--data", str(tmp_path / "absent.csv"),
                     "--out-dir", str(out)]) == 2
        assert not out.exists()

    def test_idx_input_with_image_augmentation(self, tmp_path):
        rng = np.random.default_rng(0)
        write_idx_images(tmp_path / "img", rng.integers(0, 256, size=(12, 4, 4)))
        write_idx_labels(tmp_path / "lab", rng.integers(0, 3, size=12))
        out = tmp_path / "p"
        assert main(["pretrain", "--idx-images", str(tmp_path / "img"),
                     "--idx-labels", str(tmp_path / "lab"), "--augment", "image",
                     "--hidden-dims", "6", "--latent-dim", "2", "--epochs", "2",
                     "--out-dir", str(out)]) == 0

    def test_image_augmentation_needs_shape(self, tmp_path, blobs_csv):
        assert main(["pretrain", "--data", str(blobs_csv), "--augment", "image",
                     "--out-dir", str(tmp_path / "x")]) == 2


class TestCluster:
    def test_outputs_and_zero_iterations(self, tmp_path, blobs_csv, pretrained):
        out = tmp_path / "c"
        assert main(cluster_args(blobs_csv, pretrained, out, "--max-iter", "0")) == 0
        labels = np.array([int(r[0]) for r in rows(out / "labels.csv")[1:]])
        from decs.trainer import kmeans_init
        ae = Autoencoder.from_arrays(checkpoint.load(pretrained / "checkpoint.decs"))
        x = load_csv(blobs_csv, has_label_column=True).features
        np.testing.assert_array_equal(labels, kmeans_init(ae.encode(x), 3)[1])
        for name in ("truth.csv", "centroids.csv", "history.csv", "checkpoint.decs",
                     "manifest.json"):
            assert (out / name).is_file()

    def test_history_columns(self, tmp_path, blobs_csv, pretrained):
        out = tmp_path / "c"
        assert main(cluster_args(blobs_csv, pretrained, out, "--max-iter", "12",
                                 "--label-change-tol", "0")) == 0
        header, *body = rows(out / "history.csv")
        assert header[:5] == ["iter", "L_c", "t", "grad_norm", "bound_M"]
        assert len(body) == 3
        assert len(rows(out / "iterations.csv")) == 1 + 12

    def test_snapshot_count(self, tmp_path, blobs_csv, pretrained):
        out = tmp_path / "c"
        assert main(cluster_args(blobs_csv, pretrained, out, "--max-iter", "250",
                                 "--label-change-tol", "0", "--snapshot-every", "100")) == 0
        snaps = sorted(p.name for p in (out / "snapshots").glob("embeddings_*.csv"))
        assert snaps == ["embeddings_000000.csv", "embeddings_000100.csv", "embeddings_000200.csv"]
        emb = rows(out / "snapshots" / "embeddings_000100.csv")
        assert len(emb) == 120 and len(emb[0]) == 3 + 1

    def test_byte_identical_outputs(self, tmp_path, blobs_csv, pretrained):
        outs = [tmp_path / "c1", tmp_path / "c2"]
        for out in outs:
            assert main(cluster_args(blobs_csv, pretrained, out, "--max-iter", "20")) == 0
        for name in ("labels.csv", "centroids.csv", "history.csv", "checkpoint.decs"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_k_larger_than_n(self, tmp_path, blobs_csv, pretrained):
        args = cluster_args(blobs_csv, pretrained, tmp_path / "c")
        args[args.index("--k") + 1] = "500"
        assert main(args) == 2

    def test_checkpoint_version_mismatch(self, tmp_path, blobs_csv, pretrained):
        buf = bytearray((pretrained / "checkpoint.decs").read_bytes())
        buf[4] = 9
        bad = tmp_path / "bad.decs"
        bad.write_bytes(bytes(buf))
        args = cluster_args(blobs_csv, pretrained, tmp_path / "c")
        args[args.index("--checkpoint") + 1] = str(bad)
        assert main(args) == 2

    def test_config_file_and_precedence(self, tmp_path, blobs_csv, pretrained):
        conf = tmp_path / "run.conf"
        conf.write_text("# clustering settings\nk = 3\nmax_iter = 7\nlambda = 0.5\n"
                        "label_change_tol = 0\n")
        out = tmp_path / "c"
        assert main(["cluster", "--config", str(conf), "--data", str(blobs_csv), "--has-labels",
                     "--checkpoint", str(pretrained / "checkpoint.decs"), "--max-iter", "5",
                     "--out-dir", str(out)]) == 0
        import json
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["iterations"] == 5
        assert manifest["config"]["lam"] == 0.5

    def test_unknown_config_key(self, tmp_path, blobs_csv):
        conf = tmp_path / "bad.conf"
        conf.write_text("bogus = 1\n")
        assert main(["synth", "--config", str(conf), "--out", str(tmp_path / "x.csv")]) == 2


class TestEval:
    def write(self, path, labels):
        path.write_text("label\n" + "".join(f"{v}\n" for v in labels))
        return str(path)

    def test_identical(self, tmp_path, capsys):
        a = self.write(tmp_path / "a.csv", [0, 0, 1, 2])
        assert main(["eval", "--pred", a, "--truth", a, "--out", str(tmp_path / "r.csv")]) == 0
        assert "ACC=1.000000 NMI=1.000000" in capsys.readouterr().out
        assert rows(tmp_path / "r.csv")[1] == ["4", "3", "1.0", "1.0"]
        assert (tmp_path / "r.txt").is_file()

    def test_relabeled(self, tmp_path, capsys):
        a = self.write(tmp_path / "a.csv", [0, 0, 1, 2])
        b = self.write(tmp_path / "b.csv", [5, 5, 9, 1])
        assert main(["eval", "--pred", b, "--truth", a]) == 0
        assert "ACC=1.000000" in capsys.readouterr().out

    def test_hand_example(self, tmp_path, capsys):
        truth = self.write(tmp_path / "t.csv", [0, 0, 1, 1])
        pred = self.write(tmp_path / "p.csv", [0, 1, 1, 1])
        assert main(["eval", "--pred", pred, "--truth", truth]) == 0
        assert "ACC=0.750000" in capsys.readouterr().out

    def test_length_mismatch(self, tmp_path):
        a = self.write(tmp_path / "a.csv", [0, 1])
        b = self.write(tmp_path / "b.csv", [0, 1, 1])
        assert main(["eval", "--pred", a, "--truth", b]) == 2

    def test_reads_truth_column_of_dataset(self, tmp_path, blobs_csv, pretrained):
        out = tmp_path / "c"
        main(cluster_args(blobs_csv, pretrained, out, "--max-iter", "0"))
        assert main(["eval", "--pred", str(out / "labels.csv"), "--truth", str(blobs_csv)]) == 0


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert main(["gradcheck", "--configs", "6"]) == 0
        assert "RESULT PASS" in capsys.readouterr().out

    def test_tiny_tolerance_names_worst_offender(self, capsys):
        assert main(["gradcheck", "--configs", "3", "--tolerance", "1e-12"]) == 1
        out = capsys.readouterr().out
        assert "RESULT FAIL" in out
        assert "worst offender:" in out

    def test_report_is_reproducible(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        for path in (a, b):
            main(["gradcheck", "--configs", "3", "--seed", "7", "--out", str(path)])
        assert a.read_bytes() == b.read_bytes()


def test_config_file_parser(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("--max-iter = 5\nsgd_lr=0.2  # comment\n\n")
    assert read_config_file(conf) == {"max_iter": "5", "sgd_lr": "0.2"}


def test_usage_error_exit_code():
    assert main(["cluster"]) == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "decs.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "decs" in proc.stdout
