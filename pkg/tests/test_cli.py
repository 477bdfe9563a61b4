import csv
import io
import json

import numpy as np
import pytest

from imse.audio import WavFile, wav_read, wav_write
from imse.cli import build_parser, enhance_signal, main
from imse.model import build_model, count_params, preset, save_checkpoint
from imse.spectral import StftConfig, interior
from imse.tensor import make_rng
from imse.training import ToyDatasetConfig, si_snr, synth_pair


def run(argv):
    out = io.StringIO()
    code = main(argv, out)
    return code, out.getvalue()


@pytest.fixture
def identity_ckpt(tmp_path):
    path = tmp_path / "identity.imse"
    save_checkpoint(path, build_model(preset("tiny", zero_head=True), 0))
    return path


class TestParser:
    def test_bad_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["params", "--no-such-flag"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    @pytest.mark.parametrize("argv", [["--seed", "5", "--json", "params"], ["params", "--seed", "5", "--json"]])
    def test_global_flags_either_side(self, argv):
        args = build_parser().parse_args(argv)
        assert args.seed == 5 and args.json is True


class TestParams:
    def test_tiny_table_sums(self):
        code, text = run(["params", "--preset", "tiny"])
        assert code == 0
        rows = dict(line.split() for line in text.splitlines()[1:6])
        parts = sum(int(rows[k]) for k in ("embedding", "attention", "resampling", "head"))
        assert parts == int(rows["total"]) == count_params(build_model(preset("tiny"), 0)).total

    def test_full_side_by_side(self):
        code, text = run(["params"])
        assert code == 0
        line = next(line for line in text.splitlines() if line.startswith("total (M)"))
        assert "0.771" in line and "0.427" in line
        assert "context only" in text

    def test_json_matches_table(self):
        _, table = run(["params", "--preset", "tiny"])
        code, text = run(["--json", "params", "--preset", "tiny"])
        data = json.loads(text)
        assert code == 0
        rows = dict(line.split() for line in table.splitlines()[1:6])
        assert {k: str(v) for k, v in data["counts"].items()} == rows
        assert data["reference_reported_M"]["IMSE"] == 0.427

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"preset": "tiny", "base_channels": 8}))
        _, text = run(["--json", "params", "--config", str(cfg)])
        assert json.loads(text)["config"]["base_channels"] == 8

    def test_unknown_preset(self, capsys):
        code, _ = run(["params", "--preset", "nope"])
        assert code == 1
        assert "unknown preset" in capsys.readouterr().err


class TestGradcheck:
    def test_tiny_exits_zero(self):
        code, text = run(["gradcheck", "--samples", "30"])
        assert code == 0
        assert text.count("PASS") == 3

    def test_json(self):
        code, text = run(["--json", "gradcheck", "--scope", "mala", "--samples", "20"])
        assert code == 0 and json.loads(text)["mala"]["ok"] is True


class TestTrainToy:
    def test_csv(self, tmp_path):
        ckpt = tmp_path / "m.imse"
        code, text = run(["train-toy", "--preset", "micro", "--epochs", "3", "--items", "3", "--val-items", "2",
                          "--checkpoint", str(ckpt)])
        assert code == 0
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["epoch", "train_loss", "val_sisnr_db"]
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
        assert ckpt.exists()

    def test_deterministic_repeat(self):
        argv = ["--deterministic", "--seed", "3", "train-toy", "--preset", "micro", "--epochs", "2", "--items", "2",
                "--val-items", "1"]
        assert run(argv) == run(argv)


class TestBench:
    def test_csv_schema(self):
        code, text = run(["bench", "--n", "64,128", "--reps", "3", "--warmup", "1"])
        assert code == 0
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["N", "mode", "median_ns", "per_token_ns"]
        assert {(r[0], r[1]) for r in rows[1:]} == {("64", "linear"), ("128", "linear"),
                                                     ("64", "quadratic"), ("128", "quadratic")}
        for r in rows[1:]:
            assert float(r[3]) == pytest.approx(float(r[2]) / int(r[0]), rel=1e-3)


class TestEnhance:
    def test_identity_checkpoint(self, tmp_path, identity_ckpt):
        x = synth_pair(ToyDatasetConfig(duration=0.5, snr_db=5.0), make_rng(0))[1] * 0.3
        src, dst = tmp_path / "in.wav", tmp_path / "out.wav"
        wav_write(src, WavFile(16000, x))
        code, _ = run(["enhance", str(src), str(dst), "--checkpoint", str(identity_ckpt)])
        assert code == 0
        a, b = wav_read(src).samples, wav_read(dst).samples
        assert len(a) == len(b)
        cfg = StftConfig()
        sl = interior(cfg, cfg.n_frames(len(a)))
        # both sides are quantised to 16 bits; within that, the pipeline is the identity
        assert np.abs(a[sl] - b[sl]).max() <= 1.0 / 32768 + 1e-12

    def test_identity_in_floating_point(self):
        model = build_model(preset("tiny", zero_head=True), 0)
        x = make_rng(1).standard_normal(4000)
        y = enhance_signal(model, x)
        assert len(y) == len(x)
        cfg = StftConfig()
        sl = interior(cfg, cfg.n_frames(len(x)))
        assert np.abs(y[sl] - x[sl]).max() <= 1e-5
        assert np.all(y[cfg.covered_length(cfg.n_frames(len(x))):] == 0)

    def test_rate_mismatch(self, tmp_path, identity_ckpt, capsys):
        src = tmp_path / "in48.wav"
        wav_write(src, WavFile(48000, 0.1 * np.sin(np.arange(9600) * 0.1)))
        code, _ = run(["enhance", str(src), str(tmp_path / "o.wav"), "--checkpoint", str(identity_ckpt)])
        assert code == 1
        assert "48000 Hz" in capsys.readouterr().err
        assert not (tmp_path / "o.wav").exists()

    def test_resample_flag(self, tmp_path, identity_ckpt):
        src, dst = tmp_path / "in48.wav", tmp_path / "o.wav"
        wav_write(src, WavFile(48000, 0.1 * np.sin(np.arange(9600) * 0.1)))
        code, _ = run(["enhance", str(src), str(dst), "--checkpoint", str(identity_ckpt), "--resample"])
        assert code == 0
        out = wav_read(dst)
        assert out.sample_rate == 48000 and len(out.samples) == 9600

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        src, bad = tmp_path / "in.wav", tmp_path / "bad.imse"
        wav_write(src, WavFile(16000, np.zeros(2000)))
        bad.write_bytes(b"garbage")
        code, _ = run(["enhance", str(src), str(tmp_path / "o.wav"), "--checkpoint", str(bad)])
        assert code == 1
        assert "checkpoint" in capsys.readouterr().err

    def test_snr_improves_after_training(self, tmp_path):
        from imse.training import make_toy_dataset, train_toy

        data = make_toy_dataset(ToyDatasetConfig(n_items=60, n_val=8), 1)
        model = build_model(preset("tiny"), 1)
        ckpt = tmp_path / "toy.imse"
        train_toy(model, data, 4, seed=1, checkpoint=ckpt)
        clean, noisy = synth_pair(ToyDatasetConfig(), make_rng(999))
        src, dst = tmp_path / "noisy.wav", tmp_path / "enh.wav"
        wav_write(src, WavFile(16000, 0.5 * noisy))
        assert run(["enhance", str(src), str(dst), "--checkpoint", str(ckpt)])[0] == 0
        x, y = wav_read(src).samples, wav_read(dst).samples
        cfg = StftConfig()
        sl = interior(cfg, cfg.n_frames(len(x)))
        assert si_snr(y[sl], clean[sl]) > si_snr(x[sl], clean[sl])
