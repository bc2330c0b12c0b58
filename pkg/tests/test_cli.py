import numpy as np
import pytest

from metasoft import cli, dataio


def run(argv, capsys=None):
    try:
        code = cli.main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture
def blobs(tmp_path):
    path = tmp_path / "data.csv"
    assert run(["make-data", "--n", 600, "--classes", 3, "--dims", 16, "--spread", 1.0,
                "--meta-count", 60, "--test-count", 100, "--seed", 2, "--out", path])[0] == 0
    return path


class TestMakeData:
    def test_rows_and_repeatable(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        code, out = run(["make-data", "--n", 2000, "--classes", 4, "--dims", 2, "--seed", 7, "--out", a], capsys)
        assert code == 0 and "N=2000 C=4 d=2" in out.out
        assert len(a.read_text().splitlines()) == 2001
        run(["make-data", "--n", 2000, "--classes", 4, "--dims", 2, "--seed", 7, "--out", b])
        assert a.read_bytes() == b.read_bytes()

    def test_one_class_is_usage_error(self, tmp_path, capsys):
        code, _ = run(["make-data", "--classes", 1, "--out", tmp_path / "x.csv"], capsys)
        assert code == 2

    def test_split_too_large(self, tmp_path, capsys):
        code, _ = run(["make-data", "--n", 100, "--out", tmp_path / "x.csv"], capsys)
        assert code == 2


class TestInjectNoise:
    def test_ratio_zero(self, blobs, tmp_path):
        out = tmp_path / "n.csv"
        assert run(["inject-noise", "--in", blobs, "--out", out, "--ratio", 0])[0] == 0
        np.testing.assert_array_equal(dataio.load_csv(out).given_labels, dataio.load_csv(blobs).given_labels)

    def test_high_noise_manifest(self, tmp_path):
        data = tmp_path / "rop.csv"
        run(["make-data", "--n", 1947, "--classes", 3, "--seed", 0, "--out", data])
        out = tmp_path / "n.csv"
        assert run(["inject-noise", "--in", data, "--out", out, "--ratio", 0.68, "--seed", 0])[0] == 0
        manifest = (tmp_path / "n.csv.manifest.txt").read_text()
        assert "n_train = 1447" in manifest
        # 0.68 * 1447 = 983.96; the 0.1%..99.9% binomial band is [929, 1038]
        assert "flip_count = 991" in manifest

    def test_pairflip_two_classes(self, tmp_path):
        data = tmp_path / "d.csv"
        run(["make-data", "--n", 300, "--classes", 2, "--meta-count", 0, "--test-count", 0, "--out", data])
        run(["inject-noise", "--in", data, "--out", tmp_path / "p.csv", "--kind", "pairflip", "--ratio", 0.3])
        run(["inject-noise", "--in", data, "--out", tmp_path / "s.csv", "--kind", "symmetric", "--ratio", 0.3])
        assert (tmp_path / "p.csv").read_text() == (tmp_path / "s.csv").read_text()

    def test_parse_error_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,f0,label,true_label\n0,1.0,0,0\n1,oops,1,1\n")
        code, out = run(["inject-noise", "--in", bad, "--out", tmp_path / "o.csv"], capsys)
        assert code == 1 and "bad.csv:3" in out.err


class TestTrain:
    def test_ce_baseline_clean_blobs(self, blobs, tmp_path, capsys):
        code, out = run(["train", "--data", blobs, "--mode", "ce_baseline", "--outdir", tmp_path / "r"], capsys)
        assert code == 0
        assert "Cross Entropy" in out.out
        test_acc = float(out.out.splitlines()[-1].split("|")[2].strip().rstrip("%")) / 100
        assert test_acc > 0.95
        assert {p.name for p in (tmp_path / "r").iterdir()} >= {"metrics.csv", "checkpoint_final.txt", "config.txt"}

    def test_full_warmup_matches_baseline(self, blobs, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("epochs = 3\nwarmup_epochs = 3\nhidden_dims = 16\n")
        run(["train", "--data", blobs, "--config", cfg, "--mode", "proposed", "--outdir", tmp_path / "p"])
        run(["train", "--data", blobs, "--config", cfg, "--mode", "ce_baseline", "--outdir", tmp_path / "c"])
        for name in ("metrics.csv", "checkpoint_final.txt"):
            assert (tmp_path / "p" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()

    def test_missing_alpha_logs_default(self, blobs, tmp_path, caplog):
        cfg = tmp_path / "c.txt"
        cfg.write_text("epochs = 2\nwarmup_epochs = 1\nhidden_dims = 8\n")
        code, _ = run(["train", "--data", blobs, "--config", cfg, "--outdir", tmp_path / "r"])
        assert code == 0
        assert "alpha not set; using default 0.5" in caplog.text
        assert "alpha = 0.5" in (tmp_path / "r" / "config.txt").read_text()
        assert (tmp_path / "r" / "soft_labels.csv").exists()

    def test_divergence_exit_3(self, blobs, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        cfg.write_text("epochs = 2\nwarmup_epochs = 1\nhidden_dims = 8\nbeta = inf\n")
        with np.errstate(all="ignore"):
            code, out = run(["train", "--data", blobs, "--config", cfg, "--outdir", tmp_path / "r"], capsys)
        assert code == 3 and "epoch 1, batch 0" in out.err

    def test_unknown_config_key(self, blobs, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        cfg.write_text("gamma = 0.1\n")
        code, out = run(["train", "--data", blobs, "--config", cfg, "--outdir", tmp_path / "r"], capsys)
        assert code == 1 and "unknown key 'gamma'" in out.err

    def test_config_noise_keys(self, blobs, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        cfg.write_text("epochs = 1\nwarmup_epochs = 1\nhidden_dims = 8\nnoise_ratio = 0.4\nnoise_seed = 1\n")
        assert run(["train", "--data", blobs, "--config", cfg, "--outdir", tmp_path / "r"], capsys)[0] == 0
        assert "noise_ratio = 0.4" in (tmp_path / "r" / "config.txt").read_text()


class TestGradcheck:
    def test_default_passes(self, capsys):
        code, out = run(["gradcheck"], capsys)
        assert code == 0 and "PASS" in out.out
        assert out.out.count("seed ") == 20

    def test_coarse_eps_fails(self, capsys):
        code, out = run(["gradcheck", "--eps", 0.1, "--seeds", 3], capsys)
        assert code == 4 and "worst coordinate" in out.out

    def test_minimal_case(self, capsys):
        assert run(["gradcheck", "--batch", 1, "--classes", 2], capsys)[0] == 0

    def test_parameter_cap(self, capsys):
        code, _ = run(["gradcheck", "--layers", 3, "--width", 64, "--dims", 200], capsys)
        assert code == 2


class TestReport:
    def test_aggregate_runs(self, blobs, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        cfg.write_text("epochs = 2\nwarmup_epochs = 1\nhidden_dims = 8\n")
        paths = []
        for seed in (0, 1):
            run(["train", "--data", blobs, "--config", cfg, "--seed", seed, "--outdir", tmp_path / f"s{seed}"])
            paths.append(tmp_path / f"s{seed}" / "metrics.csv")
        code, out = run(["report", *paths, "--out", tmp_path / "agg.csv"], capsys)
        assert code == 0
        lines = (tmp_path / "agg.csv").read_text().splitlines()
        assert len(lines) == 3 and lines[0].startswith("epoch,phase,lr_mean")

    def test_mismatch_exit_1(self, tmp_path, capsys):
        (tmp_path / "a.csv").write_text("epoch,x\n0,1\n")
        (tmp_path / "b.csv").write_text("epoch,y\n0,1\n")
        code, out = run(["report", tmp_path / "a.csv", tmp_path / "b.csv", "--out", tmp_path / "o.csv"], capsys)
        assert code == 1 and "b.csv" in out.err


@pytest.mark.parametrize("command", ["make-data", "inject-noise", "train", "gradcheck", "report"])
def test_help(command, capsys):
    code, out = run([command, "--help"], capsys)
    assert code == 0 and "--" in out.out
    if command == "train":
        for text in ("alpha = 0.5", "beta = 4000.0", "k_init = 10.0", "0:0.001,10:0.0001,20:1e-05",
                     "warmup_epochs = 10", "batch_size = 16", "momentum = 0.9", "weight_decay = 0.0001"):
            assert text in out.out
