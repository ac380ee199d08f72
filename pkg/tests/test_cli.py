"""End-to-end CLI runs in a temp directory with a small configuration."""

import hashlib
import os

import numpy as np
import pytest

from tctn.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main, write_pgm

SMALL_CFG = """
# small end-to-end run
input_len = 3
horizon = 2
height = 16
width = 16
channels = 1
embed_dim = 4
num_blocks = 1
embed_kernel = 3
tc_kernel = 2,3,3
dropout = 0.1
count = 5
sprite_sizes = 6
batch_size = 2
epochs = 1
seed = 11
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_CFG)
    return path


def run(args):
    return main([str(a) for a in args])


class TestDatagen:
    def test_deterministic_checksums(self, tmp_path, small_config):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run(["datagen", "--config", small_config, "--out", out_a]) == EXIT_OK
        assert run(["datagen", "--config", small_config, "--out", out_b]) == EXIT_OK
        ha = hashlib.sha256((out_a / "dataset.tctd").read_bytes()).hexdigest()
        hb = hashlib.sha256((out_b / "dataset.tctd").read_bytes()).hexdigest()
        assert ha == hb

    def test_count_zero_is_config_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(SMALL_CFG + "count = 0\n")
        assert run(["datagen", "--config", cfg, "--out", tmp_path / "o"]) == EXIT_CONFIG

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("frobnicate = 3\n")
        assert run(["datagen", "--config", cfg, "--out", tmp_path / "o"]) == EXIT_CONFIG

    def test_effective_config_echoed_and_reloadable(self, tmp_path, small_config):
        out = tmp_path / "o"
        assert run(["datagen", "--config", small_config, "--seed", 99, "--out", out]) == EXIT_OK
        echoed = out / "config.effective"
        assert echoed.exists()
        from tctn.runconfig import RunConfig

        cfg = RunConfig.load(echoed)
        assert cfg["seed"] == 99
        assert cfg["tc_kernel"] == (2, 3, 3)

    def test_default_config_is_movingmnist_shape(self, tmp_path):
        cfg = tmp_path / "defaults.cfg"
        cfg.write_text("count = 2\nsprite_sizes = 12\n")
        out = tmp_path / "o"
        assert run(["datagen", "--config", cfg, "--out", out]) == EXIT_OK
        from tctn.datagen import load_sequences

        batch = load_sequences(out / "dataset.tctd")
        assert batch.frames.shape == (2, 20, 64, 64, 1)


class TestPipeline:
    def test_train_eval_predict(self, tmp_path, small_config):
        out = tmp_path / "o"
        assert run(["datagen", "--config", small_config, "--out", out]) == EXIT_OK

        cfg = tmp_path / "train.cfg"
        cfg.write_text(SMALL_CFG + f"dataset = {out / 'dataset.tctd'}\n")
        assert run(["train", "--config", cfg, "--out", out]) == EXIT_OK
        assert (out / "checkpoint.tctn").exists()
        assert (out / "train_log.csv").exists()

        cfg2 = tmp_path / "eval.cfg"
        cfg2.write_text(
            SMALL_CFG
            + f"dataset = {out / 'dataset.tctd'}\ncheckpoint = {out / 'checkpoint.tctn'}\n"
        )
        assert run(["eval", "--config", cfg2, "--out", out]) == EXIT_OK
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "frame_index,psnr,ssim,mae"
        assert len(lines) == 2 + 2  # horizon rows + header + mean

        assert run(["predict", "--config", cfg2, "--out", out]) == EXIT_OK
        pgms = sorted(p.name for p in out.glob("pred_*.pgm"))
        assert pgms == ["pred_01.pgm", "pred_02.pgm"]
        assert (out / "predictions.tctd").exists()

    def test_eval_on_untrained_checkpoint(self, tmp_path, small_config):
        # a freshly initialized (0-step) checkpoint must evaluate cleanly
        out = tmp_path / "o"
        assert run(["datagen", "--config", small_config, "--out", out]) == EXIT_OK
        from tctn.checkpoint import save_model
        from tctn.model import init_parameters
        from tctn.runconfig import RunConfig

        cfg = RunConfig.load(small_config)
        save_model(init_parameters(cfg.model_config()), out / "fresh.tctn")
        cfg_path = tmp_path / "eval.cfg"
        cfg_path.write_text(
            SMALL_CFG
            + f"dataset = {out / 'dataset.tctd'}\ncheckpoint = {out / 'fresh.tctn'}\n"
        )
        assert run(["eval", "--config", cfg_path, "--out", out]) == EXIT_OK
        content = (out / "metrics.csv").read_text()
        assert "nan" not in content and "inf" not in content

    def test_missing_dataset_is_data_error(self, tmp_path, small_config):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(SMALL_CFG + "dataset = /nonexistent/data.tctd\n")
        assert run(["train", "--config", cfg, "--out", tmp_path / "o"]) == EXIT_DATA

    def test_unset_checkpoint_is_config_error(self, tmp_path, small_config):
        cfg = tmp_path / "eval.cfg"
        cfg.write_text(SMALL_CFG)
        assert run(["eval", "--config", cfg, "--out", tmp_path / "o"]) == EXIT_CONFIG

    def test_corrupt_dataset_is_data_error(self, tmp_path, small_config):
        bad = tmp_path / "bad.tctd"
        bad.write_bytes(b"JUNKJUNKJUNK")
        cfg = tmp_path / "train.cfg"
        cfg.write_text(SMALL_CFG + f"dataset = {bad}\n")
        assert run(["train", "--config", cfg, "--out", tmp_path / "o"]) == EXIT_DATA


class TestPgm:
    def test_header_and_payload(self, tmp_path, rng):
        frame = rng.random((6, 9))
        path = tmp_path / "frame.pgm"
        write_pgm(path, frame)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n9 6\n255\n")
        assert len(blob) == len(b"P5\n9 6\n255\n") + 54

    def test_values_quantized(self, tmp_path):
        path = tmp_path / "ramp.pgm"
        write_pgm(path, np.array([[0.0, 0.5, 1.0]]))
        payload = path.read_bytes().split(b"255\n", 1)[1]
        assert list(payload) == [0, 128, 255]
