"""Training loop, optimizer, schedule, rollout, and evaluation."""

import dataclasses

import numpy as np
import pytest

import tctn.harness as harness
from tctn.autodiff import Parameter, Tape, Tensor, backward, finite_diff_check, sum_all
from tctn.datagen import SequenceBatch
from tctn.errors import ConfigurationError, DataFormatError, ShapeMismatchError
from tctn.harness import (
    Adam,
    TrainConfig,
    cosine_lr,
    evaluate,
    mse_loss,
    predict_autoregressive,
    train,
)
from tctn.model import TCTNConfig, forward_teacher_forced, init_parameters

from conftest import copy_probe_model


class TestMseLoss:
    def test_identical_zero(self, rng):
        x = Tensor(rng.random((3, 4)))
        assert mse_loss(x, Tensor(x.data.copy())).item() == 0.0

    def test_constant_half_difference(self):
        pred = Tensor(np.full((4, 4), 0.75))
        target = Tensor(np.full((4, 4), 0.25))
        assert abs(mse_loss(pred, target).item() - 0.25) < 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        target = Tensor(rng.random((3, 5)))
        x = Tensor(rng.random((3, 5)), requires_grad=True)
        err = finite_diff_check(lambda v: mse_loss(v, target), x, step=1e-4)
        assert err < 1e-4
        with Tape() as tape:
            loss = mse_loss(x, target)
        backward(loss, tape)
        np.testing.assert_allclose(
            x.grad, 2.0 * (x.data - target.data) / x.data.size, rtol=1e-12
        )

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            mse_loss(Tensor(rng.random((2, 2))), Tensor(rng.random((2, 3))))


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 10, 1e-3, 1e-5) == 1e-3
        assert abs(cosine_lr(10, 10, 1e-3, 1e-5) - 1e-5) < 1e-20
        assert abs(cosine_lr(5, 10, 1e-3, 1e-5) - (1e-3 + 1e-5) / 2) < 1e-12

    def test_zero_total_rejected(self):
        with pytest.raises(ConfigurationError):
            cosine_lr(0, 0, 1e-3)

    def test_monotone_decreasing(self):
        values = [cosine_lr(e, 20, 1e-3) for e in range(21)]
        assert all(a >= b for a, b in zip(values, values[1:]))


def scalar_param(value: float) -> Parameter:
    return Parameter("w", Tensor(np.array([value]), requires_grad=True))


class TestAdam:
    def test_zero_grad_no_motion(self):
        p = scalar_param(1.5)
        p.tensor.grad = np.zeros(1)
        optim = Adam([p])
        optim.step(1e-2)
        assert optim.step_count == 1
        np.testing.assert_array_equal(p.tensor.data, [1.5])

    def test_first_step_magnitude_is_lr(self):
        # bias correction makes step 1 equal lr * g / (|g| + eps)
        for g in (0.3, -2.0, 7.5):
            p = scalar_param(1.0)
            p.tensor.grad = np.array([g])
            Adam([p], eps=1e-8).step(1e-3)
            expected = 1.0 - 1e-3 * g / (abs(g) + 1e-8)
            np.testing.assert_allclose(p.tensor.data, [expected], rtol=1e-12)

    def test_missing_grad_invalid_state(self):
        p = scalar_param(1.0)
        with pytest.raises(RuntimeError):
            Adam([p]).step(1e-3)

    def test_deterministic_over_steps(self, rng):
        def run():
            gen = np.random.default_rng(5)
            p = Parameter("w", Tensor(np.ones(8), requires_grad=True))
            optim = Adam([p])
            for _ in range(10):
                p.tensor.grad = gen.standard_normal(8)
                optim.step(1e-3)
            return p.tensor.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_frozen_params_skipped(self):
        p = scalar_param(1.0)
        p.tensor.requires_grad = False
        optim = Adam([p])
        optim.step(1e-3)  # no grad needed, parameter is not managed
        np.testing.assert_array_equal(p.tensor.data, [1.0])


def small_train_setup(seed=0, count=6, dropout=0.1):
    config = TCTNConfig(
        input_len=2,
        horizon=2,
        height=8,
        width=8,
        channels=1,
        embed_dim=4,
        num_blocks=1,
        embed_kernel=3,
        tc_kernel=(2, 3, 3),
        dropout_p=dropout,
        seed=seed,
    )
    model = init_parameters(config, seed=seed)
    gen = np.random.default_rng(seed)
    frames = gen.random((count, 4, 8, 8, 1)).astype(np.float32)
    return config, model, SequenceBatch(frames)


class TestTrain:
    def test_loss_finite_and_logged(self, tmp_path):
        _, model, data = small_train_setup()
        cfg = TrainConfig(batch_size=2, base_lr=1e-3, epochs=2, seed=0)
        log = train(model, data, cfg, log_path=tmp_path / "log.csv")
        assert len(log) == 6
        assert all(np.isfinite(entry.loss) for entry in log)
        lines = (tmp_path / "log.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,step,loss,lr"
        assert len(lines) == 7

    def test_deterministic_loss_curves(self):
        def run():
            _, model, data = small_train_setup(seed=3)
            cfg = TrainConfig(batch_size=2, base_lr=1e-3, epochs=2, seed=3)
            return [entry.loss for entry in train(model, data, cfg)]

        assert run() == run()

    def test_wrong_sequence_length(self):
        config, model, _ = small_train_setup()
        bad = SequenceBatch(np.zeros((2, 5, 8, 8, 1), dtype=np.float32))
        with pytest.raises(DataFormatError):
            train(model, bad, TrainConfig())

    def test_max_steps_cap(self):
        _, model, data = small_train_setup()
        cfg = TrainConfig(batch_size=2, epochs=50, max_steps=4, seed=0)
        log = train(model, data, cfg)
        assert len(log) == 4

    def test_checkpoint_written(self, tmp_path):
        _, model, data = small_train_setup()
        path = tmp_path / "best.tctn"
        train(model, data, TrainConfig(batch_size=3, epochs=1, seed=0), checkpoint_path=path)
        from tctn.checkpoint import load_model

        assert load_model(path).parameter_count() == model.parameter_count()

    def test_single_step_decreases_batch_loss(self):
        # line-search property: for small enough lr one Adam step on a
        # batch strictly decreases that batch's loss
        _, model, data = small_train_setup(dropout=0.0)

        def batch_loss():
            total = 0.0
            for i in range(len(data)):
                seq = data.frames[i]
                out = forward_teacher_forced(Tensor(seq[:-1]), model, training=False)
                total += mse_loss(out, Tensor(seq[1:])).item()
            return total / len(data)

        before = batch_loss()
        for lr in (1e-4, 1e-5, 1e-6):
            cfg = TrainConfig(batch_size=len(data), base_lr=lr, epochs=1, max_steps=1, seed=0)
            train(model, data, cfg)
            after = batch_loss()
            if after < before:
                return
        pytest.fail(f"no lr in sweep decreased the batch loss from {before}")


class TestTeacherForcingAlignment:
    def probe(self):
        config = TCTNConfig(
            input_len=3,
            horizon=2,
            height=8,
            width=8,
            channels=1,
            embed_dim=4,
            num_blocks=1,
            embed_kernel=3,
            tc_kernel=(2, 3, 3),
            dropout_p=0.0,
            use_posenc=False,
            seed=0,
        )
        return config, copy_probe_model(config)

    def test_copy_model_zero_loss_on_constant_sequences(self):
        config, model = self.probe()
        frames = np.broadcast_to(
            np.random.default_rng(1).random((1, 1, 8, 8, 1)), (2, 5, 8, 8, 1)
        ).astype(np.float32)
        data = SequenceBatch(frames.copy())
        cfg = TrainConfig(batch_size=2, base_lr=1e-9, epochs=1, max_steps=1, seed=0)
        log = train(model, data, cfg)
        assert log[0].loss < 1e-10

    def test_copy_model_sees_next_frame_as_target(self):
        # ramp sequences distinguish the t+1 alignment from a t alignment:
        # a copy model must incur exactly the one-step difference, while
        # comparing output t to frame t would give zero loss
        config, model = self.probe()
        levels = np.arange(5, dtype=np.float32)[None, :, None, None, None] * 0.1
        frames = np.broadcast_to(levels, (1, 5, 8, 8, 1)).astype(np.float32)
        data = SequenceBatch(frames.copy())
        cfg = TrainConfig(batch_size=1, base_lr=1e-9, epochs=1, max_steps=1, seed=0)
        log = train(model, data, cfg)
        np.testing.assert_allclose(log[0].loss, 0.1 * 0.1, rtol=1e-4)


class TestPredictAutoregressive:
    def test_single_step_equals_clamped_forward(self, rng):
        config, model, _ = small_train_setup()
        context = rng.random((2, 8, 8, 1)).astype(np.float32)
        pred = predict_autoregressive(model, context, horizon=1)
        out = forward_teacher_forced(Tensor(context.astype(model.dtype)), model, training=False)
        expected = np.clip(out.data[-1], 0.0, 1.0)
        np.testing.assert_array_equal(pred[0], expected)

    def test_shapes_and_range(self, rng):
        config, model, _ = small_train_setup()
        preds = predict_autoregressive(model, rng.random((2, 8, 8, 1)), horizon=4)
        assert preds.shape == (4, 8, 8, 1)
        assert preds.min() >= 0.0 and preds.max() <= 1.0

    def test_deterministic(self, rng):
        config, model, _ = small_train_setup()
        context = rng.random((2, 8, 8, 1))
        a = predict_autoregressive(model, context, horizon=3)
        b = predict_autoregressive(model, context, horizon=3)
        np.testing.assert_array_equal(a, b)

    def test_wrong_context_length(self, rng):
        config, model, _ = small_train_setup()
        with pytest.raises(ConfigurationError):
            predict_autoregressive(model, rng.random((3, 8, 8, 1)), horizon=2)

    def test_window_discipline(self, rng, monkeypatch):
        # at rollout step k the model must see exactly context + the k-1
        # previous predictions, in order
        config, model, _ = small_train_setup()
        context = rng.random((2, 8, 8, 1)).astype(np.float32)
        seen = []
        real_forward = harness.forward_teacher_forced

        def spy(frames, *args, **kwargs):
            seen.append(frames.data.copy())
            return real_forward(frames, *args, **kwargs)

        monkeypatch.setattr(harness, "forward_teacher_forced", spy)
        preds = predict_autoregressive(model, context, horizon=3)
        assert len(seen) == 3
        for k, window in enumerate(seen):
            assert window.shape[0] == 2 + k
            np.testing.assert_array_equal(window[:2], context)
            for i in range(k):
                np.testing.assert_array_equal(window[2 + i], preds[i])


class TestEvaluate:
    def test_persistence_on_static_sequences_is_perfect(self):
        config = TCTNConfig(
            input_len=3,
            horizon=2,
            height=16,
            width=16,
            channels=1,
            embed_dim=4,
            num_blocks=1,
            embed_kernel=3,
            tc_kernel=(2, 3, 3),
            dropout_p=0.0,
            use_posenc=False,
            seed=0,
        )
        model = copy_probe_model(config)
        frame = np.zeros((16, 16, 1), dtype=np.float32)
        frame[4:9, 6:11, 0] = 1.0
        frames = np.broadcast_to(frame, (2, 5, 16, 16, 1)).copy()
        report = evaluate(model, SequenceBatch(frames))
        assert len(report.per_frame) == 2
        for fm in report.per_frame:
            assert fm.psnr == 100.0
            assert abs(fm.ssim - 1.0) < 1e-9
            assert fm.mae == 0.0

    def test_aggregate_is_mean_of_per_frame(self, rng):
        config, model, data = small_train_setup()
        big = SequenceBatch(
            np.repeat(np.repeat(data.frames, 2, axis=2), 2, axis=3)
        )  # 16x16 so ssim window fits
        big_config = dataclasses.replace(config, height=16, width=16)
        model16 = init_parameters(big_config, seed=0)
        report = evaluate(model16, big)
        assert len(report.per_frame) == big_config.horizon
        np.testing.assert_allclose(
            report.aggregate.psnr, np.mean([m.psnr for m in report.per_frame]), atol=1e-9
        )
        np.testing.assert_allclose(
            report.aggregate.mae, np.mean([m.mae for m in report.per_frame]), atol=1e-9
        )

    def test_empty_dataset_rejected(self):
        config, model, _ = small_train_setup()
        empty = SequenceBatch(np.zeros((0, 4, 8, 8, 1), dtype=np.float32))
        with pytest.raises(ConfigurationError):
            evaluate(model, empty)
