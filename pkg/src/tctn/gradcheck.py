"""Finite-difference verification of every differentiable op and of the
full network at toy scale. Used by both the test suite and the CLI
``gradcheck`` subcommand. All checks run in double precision.
"""

from __future__ import annotations

from typing import Callable, Iterator, Optional

import numpy as np

from .autodiff import (
    Tensor,
    add,
    causal_conv3d,
    channel_linear,
    conv2d_same,
    dropout,
    finite_diff_check,
    layer_norm,
    leaky_relu,
    masked_temporal_attention,
    mean_all,
    mul,
    scale,
    sub,
    sum_all,
    time_slice,
)
from .harness import mse_loss
from .model import TCTNConfig, forward_teacher_forced, init_parameters

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
STEP = 1e-4
# smaller step for the whole-network check: perturbing a shared parameter
# moves many pre-activations, so leaky-ReLU kink crossings (width ~ step)
# would otherwise dominate the numeric estimate
MODEL_STEP = 1e-5

TOY_CONFIG = TCTNConfig(
    input_len=3,
    horizon=2,
    height=8,
    width=8,
    channels=1,
    embed_dim=8,
    num_blocks=2,
    embed_kernel=5,
    tc_kernel=(3, 3, 3),
    dropout_p=0.0,
    seed=0,
)


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _probed(op_output: Tensor, probe: Tensor) -> Tensor:
    # weight the output elements so the incoming gradient is non-uniform
    return sum_all(mul(op_output, probe))


def _op_checks(rng: np.random.Generator) -> Iterator[tuple[str, Callable, Tensor]]:
    """Yield (name, scalar function, input tensor) triples for one trial."""
    t_len = int(rng.integers(1, 5))
    height = int(rng.integers(3, 7))
    width = int(rng.integers(3, 7))
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    dim = 2 * int(rng.integers(1, 4))
    kh, kw = 2 * int(rng.integers(0, 2)) + 1, 2 * int(rng.integers(0, 2)) + 1
    kt = int(rng.integers(1, 4))

    x2 = _rand(rng, t_len, height, width, cin)
    k2 = _rand(rng, kh, kw, cin, cout)
    b2 = _rand(rng, cout)
    p2 = _rand(rng, t_len, height, width, cout)
    yield "conv2d_same/input", lambda x: _probed(conv2d_same(x, k2, b2), p2), x2
    yield "conv2d_same/kernel", lambda k: _probed(conv2d_same(x2, k, b2), p2), k2
    yield "conv2d_same/bias", lambda b: _probed(conv2d_same(x2, k2, b), p2), b2

    k3 = _rand(rng, kt, kh, kw, cin, cout)
    yield "causal_conv3d/input", lambda x: _probed(causal_conv3d(x, k3, b2), p2), x2
    yield "causal_conv3d/kernel", lambda k: _probed(causal_conv3d(x2, k, b2), p2), k3
    yield "causal_conv3d/bias", lambda b: _probed(causal_conv3d(x2, k3, b), p2), b2

    q = _rand(rng, t_len, height, width, dim)
    k = _rand(rng, t_len, height, width, dim)
    v = _rand(rng, t_len, height, width, dim)
    pa = _rand(rng, t_len, height, width, dim)
    yield "attention/q", lambda t: _probed(masked_temporal_attention(t, k, v), pa), q
    yield "attention/k", lambda t: _probed(masked_temporal_attention(q, t, v), pa), k
    yield "attention/v", lambda t: _probed(masked_temporal_attention(q, k, t), pa), v

    # guarantee per-row variance >= O(1): the finite-difference oracle loses
    # validity where inv_std blows up the curvature
    xn = Tensor(rng.standard_normal((t_len, height, dim)) + np.linspace(-2.0, 2.0, dim))
    gamma = _rand(rng, dim)
    beta = _rand(rng, dim)
    pn = _rand(rng, t_len, height, dim)
    yield "layer_norm/input", lambda x: _probed(layer_norm(x, gamma, beta), pn), xn
    yield "layer_norm/gamma", lambda g: _probed(layer_norm(xn, g, beta), pn), gamma
    yield "layer_norm/beta", lambda b: _probed(layer_norm(xn, gamma, b), pn), beta

    wl = _rand(rng, cin, cout)
    bl = _rand(rng, cout)
    pl = _rand(rng, t_len, height, cout)
    xl = _rand(rng, t_len, height, cin)
    yield "channel_linear/input", lambda x: _probed(channel_linear(x, wl, bl), pl), xl
    yield "channel_linear/weight", lambda w: _probed(channel_linear(xl, w, bl), pl), wl
    yield "channel_linear/bias", lambda b: _probed(channel_linear(xl, wl, b), pl), bl

    xe = _rand(rng, height, width)
    pe = _rand(rng, height, width)
    yield "leaky_relu", lambda x: _probed(leaky_relu(x, 0.01), pe), xe
    yield "dropout/train-mode", (
        lambda x: _probed(dropout(x, 0.4, True, np.random.default_rng(1234)), pe)
    ), xe
    yield "add", lambda x: _probed(add(x, pe), pe), xe
    yield "sub", lambda x: _probed(sub(pe, x), pe), xe
    yield "mul", lambda x: _probed(mul(x, x), pe), xe
    yield "scale", lambda x: sum_all(scale(x, -1.7)), xe
    yield "mean_all", lambda x: scale(mean_all(x), 3.0), xe
    if t_len >= 2:
        pt = _rand(rng, t_len - 1, height, width, cin)
        yield "time_slice", lambda x: _probed(time_slice(x, 1), pt), x2
    yield "mse_loss", lambda x: mse_loss(x, pe), xe


def check_ops(
    trials: int = 20, seed: int = 0, sample: Optional[int] = 40
) -> dict[str, float]:
    """Max relative finite-difference error per op over randomized trials."""
    worst: dict[str, float] = {}
    for trial in range(trials):
        rng = np.random.default_rng((seed, trial))
        for name, f, x in _op_checks(rng):
            err = finite_diff_check(f, x, step=STEP, sample=sample, rng=rng)
            if err > worst.get(name, 0.0):
                worst[name] = err
    return worst


def check_model(
    trials: int = 20,
    seed: int = 0,
    coords_per_group: int = 2,
    config: TCTNConfig = TOY_CONFIG,
) -> dict[str, float]:
    """Max relative error per parameter group of the toy-scale network.

    Each trial draws a fresh model, input window, and target, then compares
    the analytic gradient of the teacher-forced MSE against central
    differences on a few random coordinates of every parameter group.
    """
    t_len = config.input_len + config.horizon - 1
    worst: dict[str, float] = {}
    for trial in range(trials):
        rng = np.random.default_rng((seed, trial))
        model = init_parameters(config, seed=seed + trial, dtype=np.float64)
        frames = Tensor(rng.random((t_len, config.height, config.width, config.channels)))
        target = Tensor(rng.random((t_len, config.height, config.width, config.channels)))

        for param in model.parameters:
            def loss_of(w: Tensor, _p=param) -> Tensor:
                saved = _p.tensor
                _p.tensor = w
                try:
                    out = forward_teacher_forced(frames, model, training=False)
                    return mse_loss(out, target)
                finally:
                    _p.tensor = saved

            err = finite_diff_check(
                loss_of, param.tensor, step=MODEL_STEP, sample=coords_per_group, rng=rng
            )
            if err > worst.get(param.name, 0.0):
                worst[param.name] = err
    return worst
