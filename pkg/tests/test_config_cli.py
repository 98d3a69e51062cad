"""Config parsing and the command-line workflows."""

import numpy as np
import pytest
from PIL import Image

import cdgnet.cli as cli
from cdgnet.checkpoint import save_checkpoint
from cdgnet.config import Config, parse_config
from cdgnet.data import save_image, synthetic_sharp_image, synth_blur, random_blur_field
from cdgnet.errors import ConfigError
from cdgnet.model import CDGNet


class TestConfig:
    def test_defaults(self):
        cfg = Config()
        assert cfg.channels == 128
        assert cfg.small_channels == 32
        assert cfg.reduction_ratio == 8
        assert cfg.mu == 0.96
        assert cfg.lambda1 == 0.1 and cfg.lambda2 == 0.1
        assert cfg.lr == 1e-4 and cfg.lr_decay == 0.5 and cfg.lr_step == 500
        assert cfg.epochs == 3000 and cfg.batch == 6 and cfg.crop == 256

    def test_parse_overrides_and_comments(self):
        cfg = parse_config("channels = 16\n# comment\nlr=0.001  # inline\n\nbatch=2\n")
        assert cfg.channels == 16 and cfg.lr == 0.001 and cfg.batch == 2
        assert cfg.crop == 256  # untouched default

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="widht"):
            parse_config("widht=4\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="lr"):
            parse_config("lr=fast\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("channels 16\n")

    def test_indivisible_channels(self):
        with pytest.raises(ConfigError):
            Config(channels=10)


TOY_CONFIG = ("channels=8\nsmall_channels=4\nreduction_ratio=2\n"
              "epochs=2\nbatch=2\ncrop=16\n")


def _write_dataset(root, n=2, size=24, seed=0):
    (root / "blur").mkdir(parents=True)
    (root / "sharp").mkdir()
    rng = np.random.default_rng(seed)
    for i in range(n):
        sharp = synthetic_sharp_image(size, size, rng)
        blur = synth_blur(sharp, random_blur_field((size, size), rng), rng)
        save_image(sharp, root / "sharp" / f"{i}.png")
        save_image(blur, root / "blur" / f"{i}.png")


@pytest.fixture()
def toy_env(tmp_path):
    data = tmp_path / "data"
    _write_dataset(data)
    cfg_path = tmp_path / "toy.cfg"
    cfg_path.write_text(TOY_CONFIG)
    return tmp_path, data, cfg_path


class TestTrainCommand:
    def test_toy_run_writes_checkpoint_and_metrics(self, toy_env):
        tmp_path, data, cfg_path = toy_env
        out = tmp_path / "model.ckpt"
        rc = cli.main(["train", "--data", str(data), "--config", str(cfg_path),
                       "--out", str(out)])
        assert rc == 0
        assert out.exists()
        metrics = tmp_path / "model.metrics.csv"
        lines = metrics.read_text().strip().splitlines()
        assert lines[0].startswith("epoch,lr,")
        assert len(lines) == 3

    def test_unknown_config_key_exits_nonzero(self, toy_env, capsys):
        tmp_path, data, cfg_path = toy_env
        bad = tmp_path / "bad.cfg"
        bad.write_text("chanels=8\n")
        rc = cli.main(["train", "--data", str(data), "--config", str(bad),
                       "--out", str(tmp_path / "m.ckpt")])
        assert rc == 1
        assert "chanels" in capsys.readouterr().err

    def test_missing_dataset_dirs(self, tmp_path, capsys):
        rc = cli.main(["train", "--data", str(tmp_path), "--out",
                       str(tmp_path / "m.ckpt")])
        assert rc == 1
        assert "blur" in capsys.readouterr().err


@pytest.fixture()
def toy_checkpoint(tmp_path):
    cfg = parse_config(TOY_CONFIG)
    model = CDGNet(cfg, np.random.default_rng(cfg.seed), dtype=np.float32)
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint([(n, p.data) for n, p in model.named_parameters()], ckpt)
    cfg_path = tmp_path / "toy.cfg"
    cfg_path.write_text(TOY_CONFIG)
    return tmp_path, ckpt, cfg_path


class TestDeblurCommand:
    def test_output_extents_preserved_with_padding(self, toy_checkpoint, capsys):
        tmp_path, ckpt, cfg_path = toy_checkpoint
        rng = np.random.default_rng(0)
        inp = tmp_path / "in.png"
        save_image(rng.random((3, 22, 18)), inp)  # not divisible by 4
        outp = tmp_path / "out.png"
        rc = cli.main(["deblur", "--ckpt", str(ckpt), "--in", str(inp),
                       "--out", str(outp), "--config", str(cfg_path)])
        assert rc == 0
        assert "reflect-padded" in capsys.readouterr().out
        with Image.open(outp) as im:
            assert im.size == (18, 22)

    def test_aux_dump_file_names(self, toy_checkpoint):
        tmp_path, ckpt, cfg_path = toy_checkpoint
        inp = tmp_path / "in.png"
        save_image(np.random.default_rng(1).random((3, 16, 16)), inp)
        aux = tmp_path / "aux"
        rc = cli.main(["deblur", "--ckpt", str(ckpt), "--in", str(inp),
                       "--out", str(tmp_path / "out.png"), "--config",
                       str(cfg_path), "--dump-aux", str(aux)])
        assert rc == 0
        names = sorted(p.name for p in aux.iterdir())
        assert names == ["large_branch.png", "small_branch.png",
                         "spatial_attention_large.png", "spatial_attention_small.png"]
        for name in names:
            with Image.open(aux / name) as im:
                assert im.size == (16, 16)


class TestEvalCommand:
    def test_csv_rows_and_mean(self, toy_checkpoint):
        tmp_path, ckpt, cfg_path = toy_checkpoint
        data = tmp_path / "data"
        _write_dataset(data, n=3, size=16)
        csv = tmp_path / "eval.csv"
        rc = cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                       "--config", str(cfg_path), "--csv", str(csv)])
        assert rc == 0
        lines = csv.read_text().strip().splitlines()
        assert lines[0] == "name,psnr,ssim"
        assert len(lines) == 5  # header + 3 pairs + mean
        rows = [line.split(",") for line in lines[1:4]]
        mean = lines[4].split(",")
        assert mean[0] == "mean"
        assert float(mean[1]) == pytest.approx(
            np.mean([float(r[1]) for r in rows]), abs=1e-9)
        assert float(mean[2]) == pytest.approx(
            np.mean([float(r[2]) for r in rows]), abs=1e-9)

    def test_perfect_prediction_inf_sentinel(self, toy_checkpoint, monkeypatch):
        tmp_path, ckpt, cfg_path = toy_checkpoint
        data = tmp_path / "data"
        _write_dataset(data, n=1, size=16)
        monkeypatch.setattr(cli, "psnr", lambda a, b: float("inf"))
        monkeypatch.setattr(cli, "ssim", lambda a, b: 1.0)
        csv = tmp_path / "eval.csv"
        rc = cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                       "--config", str(cfg_path), "--csv", str(csv)])
        assert rc == 0
        lines = csv.read_text().strip().splitlines()
        assert lines[1].split(",")[1] == "inf"
        assert lines[2] == "mean,inf,1.0000000000"

    def test_unpaired_files_skipped_with_warning(self, toy_checkpoint, capsys):
        tmp_path, ckpt, cfg_path = toy_checkpoint
        data = tmp_path / "data"
        _write_dataset(data, n=2, size=16)
        save_image(np.zeros((3, 16, 16)), data / "blur" / "orphan.png")
        rc = cli.main(["eval", "--ckpt", str(ckpt), "--data", str(data),
                       "--config", str(cfg_path)])
        assert rc == 0
        assert "orphan.png" in capsys.readouterr().err


class TestDiagnoseCommand:
    def test_constant_image_format(self, tmp_path):
        inp = tmp_path / "c.png"
        save_image(np.full((3, 16, 16), 0.5), inp)
        out = tmp_path / "diag.csv"
        rc = cli.main(["diagnose", "--in", str(inp), "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "bin_index,count"
        assert lines[1] == "0,225"  # 15*15 interior gradients, all zero
        assert "radius,log_mag" in lines
        assert lines[-1] == "hf_ratio,0.00000000"

    def test_sharp_vs_blurred_hf_ordering(self, tmp_path):
        rng = np.random.default_rng(0)
        sharp = synthetic_sharp_image(48, 48, rng)
        field = random_blur_field((48, 48), rng, small_length=(9, 12))
        field.sigma = 0.0
        blur = synth_blur(sharp, field, rng)
        ratios = {}
        for name, img in (("sharp", sharp), ("blur", blur)):
            save_image(img, tmp_path / f"{name}.png")
            out = tmp_path / f"{name}.csv"
            assert cli.main(["diagnose", "--in", str(tmp_path / f"{name}.png"),
                             "--out", str(out)]) == 0
            ratios[name] = float(out.read_text().strip().splitlines()[-1]
                                 .split(",")[1])
        assert ratios["blur"] < ratios["sharp"]


class TestGradcheckCommand:
    def test_single_op_and_reproducibility(self, capsys):
        assert cli.main(["gradcheck", "--op", "relu"]) == 0
        first = capsys.readouterr().out
        assert "relu: max_rel_err=" in first
        assert first.count("max_rel_err") == 1
        assert cli.main(["gradcheck", "--op", "relu"]) == 0
        second = capsys.readouterr().out
        assert first.splitlines()[0] == second.splitlines()[0]

    def test_unknown_op(self, capsys):
        assert cli.main(["gradcheck", "--op", "nope"]) == 2
        assert "nope" in capsys.readouterr().err
