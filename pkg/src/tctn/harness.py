"""Training loop (teacher forcing, MSE, Adam, cosine annealing) and
autoregressive evaluation.

Training feeds the first J+K-1 frames of each sequence and compares output
t to frame t+1; by default the loss covers every shifted output, with a
future-only mode for ablation. Inference generates one frame at a time,
clamps it to [0, 1], and appends it to a growing context window.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tape, Tensor, add, backward, mean_all, mul, scale, sub, time_slice
from .checkpoint import save_model
from .datagen import SequenceBatch
from .errors import ConfigurationError, DataFormatError, ShapeMismatchError
from .metrics import FrameMetrics, MetricReport, mae, psnr, ssim
from .model import TCTNModel, forward_teacher_forced


@dataclass
class TrainConfig:
    batch_size: int = 8
    base_lr: float = 1e-4
    epochs: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    min_lr: float = 0.0
    seed: int = 0
    loss_on_all_outputs: bool = True
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.base_lr <= 0.0:
            raise ConfigurationError("base_lr must be positive")
        if self.min_lr > self.base_lr:
            raise ConfigurationError("min_lr must not exceed base_lr")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")


@dataclass
class LogEntry:
    epoch: int
    step: int
    loss: float
    lr: float


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return mean_all(mul(diff, diff)).check_finite("mse loss")


def cosine_lr(epoch: int, total: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Cosine annealing from base_lr (epoch 0) down to min_lr (epoch == total)."""
    if total <= 0:
        raise ConfigurationError("total epochs must be positive")
    if not 0 <= epoch <= total:
        raise ConfigurationError(f"epoch {epoch} outside [0, {total}]")
    return min_lr + (base_lr - min_lr) * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


class Adam:
    """Bias-corrected Adam over the trainable parameters it is given."""

    def __init__(self, parameters, betas=(0.9, 0.999), eps: float = 1e-8):
        self._params = [p for p in parameters if p.tensor.requires_grad]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = {p.name: np.zeros_like(p.tensor.data) for p in self._params}
        self._v = {p.name: np.zeros_like(p.tensor.data) for p in self._params}

    def step(self, lr: float) -> None:
        for p in self._params:
            if p.tensor.grad is None:
                raise RuntimeError(f"adam step: parameter {p.name} has no gradient")
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for p in self._params:
            g = p.tensor.grad
            m = self._m[p.name]
            v = self._v[p.name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            m_hat = m / correction1
            v_hat = v / correction2
            p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _sequence_loss(model: TCTNModel, seq: np.ndarray, cfg: TrainConfig, rng) -> Tensor:
    """Teacher-forced loss of one (J+K, H, W, C) sequence."""
    inputs = Tensor(seq[:-1])
    targets = Tensor(seq[1:])
    out = forward_teacher_forced(inputs, model, training=True, rng=rng)
    if not cfg.loss_on_all_outputs:
        start = model.config.input_len - 1
        out = time_slice(out, start)
        targets = Tensor(seq[1:][start:])
    return mse_loss(out, targets)


def train(
    model: TCTNModel,
    dataset: SequenceBatch,
    cfg: TrainConfig,
    log_path=None,
    checkpoint_path=None,
) -> list[LogEntry]:
    """Run the optimization loop; returns the per-step log.

    Per batch: mean teacher-forced MSE over the batch, one backward pass,
    one Adam step at the epoch's cosine-annealed learning rate. The
    best-epoch (lowest mean loss) model is checkpointed when a path is
    given. Fully deterministic for a fixed seed.
    """
    mcfg = model.config
    expected_len = mcfg.input_len + mcfg.horizon
    if dataset.frames.shape[1] != expected_len:
        raise DataFormatError(
            f"dataset sequences have {dataset.frames.shape[1]} frames, "
            f"expected input_len + horizon = {expected_len}"
        )
    if len(dataset) == 0:
        raise ConfigurationError("empty dataset")

    rng = np.random.default_rng(cfg.seed)
    optim = Adam(model.parameters, cfg.betas, cfg.adam_eps)
    log: list[LogEntry] = []
    best_epoch_loss = math.inf
    step = 0
    done = False

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr, cfg.min_lr)
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            model.zero_grad()
            with Tape() as tape:
                total = None
                for idx in batch:
                    li = _sequence_loss(model, dataset.frames[idx], cfg, rng)
                    total = li if total is None else add(total, li)
                loss = scale(total, 1.0 / len(batch))
            backward(loss, tape)
            optim.step(lr)
            step += 1
            value = loss.item()
            if not math.isfinite(value):
                raise ConfigurationError("training loss became non-finite")
            epoch_losses.append(value)
            log.append(LogEntry(epoch, step, value, lr))
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        mean_loss = float(np.mean(epoch_losses))
        if checkpoint_path is not None and mean_loss < best_epoch_loss:
            best_epoch_loss = mean_loss
            save_model(model, checkpoint_path)
        if done:
            break

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "loss", "lr"])
            for entry in log:
                writer.writerow([entry.epoch, entry.step, repr(entry.loss), repr(entry.lr)])
    return log


def predict_autoregressive(model: TCTNModel, context: np.ndarray, horizon: int) -> np.ndarray:
    """Roll the model forward frame by frame from a (J, H, W, C) context.

    Each step runs the forward pass on the current window, clamps the last
    output to [0, 1], and appends it; the window grows past J. Returns the
    (horizon, H, W, C) predictions. Dropout is always off here.
    """
    context = np.asarray(context)
    if context.ndim != 4 or context.shape[0] != model.config.input_len:
        raise ConfigurationError(
            f"context must be ({model.config.input_len}, H, W, C), got {context.shape}"
        )
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    window = context.astype(model.dtype, copy=True)
    preds = []
    for _ in range(horizon):
        out = forward_teacher_forced(Tensor(window), model, training=False)
        next_frame = np.clip(out.data[-1], 0.0, 1.0)
        preds.append(next_frame)
        window = np.concatenate([window, next_frame[None]], axis=0)
    return np.stack(preds, axis=0)


def evaluate(model: TCTNModel, dataset: SequenceBatch) -> MetricReport:
    """Autoregressive rollout on every sequence; metrics per horizon step."""
    if len(dataset) == 0:
        raise ConfigurationError("empty evaluation dataset")
    j, k = model.config.input_len, model.config.horizon
    if dataset.frames.shape[1] != j + k:
        raise DataFormatError(
            f"dataset sequences have {dataset.frames.shape[1]} frames, expected {j + k}"
        )
    psnr_acc = np.zeros(k)
    ssim_acc = np.zeros(k)
    mae_acc = np.zeros(k)
    for s in range(len(dataset)):
        seq = dataset.frames[s]
        preds = predict_autoregressive(model, seq[:j], k)
        truth = seq[j:]
        for i in range(k):
            psnr_acc[i] += psnr(preds[i], truth[i])
            ssim_acc[i] += ssim(preds[i], truth[i])
            mae_acc[i] += mae(preds[i], truth[i])
    n = len(dataset)
    per_frame = [
        FrameMetrics(psnr_acc[i] / n, ssim_acc[i] / n, mae_acc[i] / n) for i in range(k)
    ]
    return MetricReport.from_per_frame(per_frame)
