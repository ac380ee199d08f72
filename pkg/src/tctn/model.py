"""The frame-prediction network.

Pipeline: two-conv spatial embedding with a residual shortcut, sinusoidal
positional encoding fused by addition, a stack of pre-LN Transformer blocks
whose attention and feed-forward sublayers use causal 3D temporal
convolutions, and a per-position linear forecaster mapping embedding
channels back to frame channels. Output index t is the prediction of
frame t+1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    add,
    causal_conv3d,
    channel_linear,
    conv2d_same,
    dropout,
    layer_norm,
    leaky_relu,
    masked_temporal_attention,
)
from .errors import ConfigurationError, ShapeMismatchError

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class TCTNConfig:
    """Architecture and regularization hyperparameters.

    input_len is the number of context frames, horizon the number of
    frames to predict. embed_dim must be even because the positional
    encoding pairs channels as (sin, cos).
    """

    input_len: int = 10
    horizon: int = 10
    height: int = 64
    width: int = 64
    channels: int = 1
    embed_dim: int = 128
    num_blocks: int = 6
    embed_kernel: int = 5
    tc_kernel: tuple[int, int, int] = (3, 3, 3)
    dropout_p: float = 0.1
    lrelu_slope: float = 0.01
    use_posenc: bool = True
    qkv_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tc_kernel", tuple(int(v) for v in self.tc_kernel))
        if self.input_len < 1 or self.horizon < 1:
            raise ConfigurationError("input_len and horizon must be >= 1")
        if min(self.height, self.width, self.channels) < 1:
            raise ConfigurationError("frame extents must be positive")
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ConfigurationError("embed_dim must be even and >= 2")
        if self.num_blocks < 1:
            raise ConfigurationError("num_blocks must be >= 1")
        if self.embed_kernel % 2 == 0 or self.embed_kernel < 1:
            raise ConfigurationError("embed_kernel must be odd and positive")
        if len(self.tc_kernel) != 3 or min(self.tc_kernel) < 1:
            raise ConfigurationError("tc_kernel must be three positive extents")
        if self.tc_kernel[1] % 2 == 0 or self.tc_kernel[2] % 2 == 0:
            raise ConfigurationError("tc_kernel spatial extents must be odd")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError("dropout_p must be in [0, 1)")
        if self.lrelu_slope < 0.0:
            raise ConfigurationError("lrelu_slope must be >= 0")


class TCTNModel:
    """Named parameter set realizing the network; shapes derive from config."""

    def __init__(self, config: TCTNConfig, params: dict[str, Parameter]):
        self.config = config
        self._params = params

    @property
    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def param(self, name: str) -> Tensor:
        return self._params[name].tensor

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.tensor.data.size for p in self._params.values())

    @property
    def dtype(self):
        return next(iter(self._params.values())).tensor.dtype


def parameter_specs(config: TCTNConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """Canonical parameter table: name -> (shape, init kind).

    Kind is 'uniform' (fan-in-scaled weight), 'zeros' (bias/shift), or
    'ones' (layer-norm scale). Order here is the model and checkpoint order.
    """
    c, d = config.channels, config.embed_dim
    ek = config.embed_kernel
    kt, kh, kw = config.tc_kernel
    specs: dict[str, tuple[tuple[int, ...], str]] = {
        "embed.conv1.weight": ((ek, ek, c, d), "uniform"),
        "embed.conv1.bias": ((d,), "zeros"),
        "embed.conv2.weight": ((ek, ek, d, d), "uniform"),
        "embed.conv2.bias": ((d,), "zeros"),
    }
    for i in range(config.num_blocks):
        pre = f"block{i}."
        specs[pre + "ln1.gamma"] = ((d,), "ones")
        specs[pre + "ln1.beta"] = ((d,), "zeros")
        for which in ("wq", "wk", "wv"):
            specs[pre + f"attn.{which}.weight"] = ((kt, kh, kw, d, d), "uniform")
            specs[pre + f"attn.{which}.bias"] = ((d,), "zeros")
        specs[pre + "attn.proj.weight"] = ((d, d), "uniform")
        specs[pre + "attn.proj.bias"] = ((d,), "zeros")
        specs[pre + "ln2.gamma"] = ((d,), "ones")
        specs[pre + "ln2.beta"] = ((d,), "zeros")
        specs[pre + "ffn.conv1.weight"] = ((kt, kh, kw, d, d), "uniform")
        specs[pre + "ffn.conv1.bias"] = ((d,), "zeros")
        specs[pre + "ffn.conv2.weight"] = ((kt, kh, kw, d, d), "uniform")
        specs[pre + "ffn.conv2.bias"] = ((d,), "zeros")
    specs["forecaster.weight"] = ((d, c), "uniform")
    specs["forecaster.bias"] = ((c,), "zeros")
    return specs


def _fan_in(shape: tuple[int, ...]) -> int:
    # all but the output-channel axis feed one output element
    return int(np.prod(shape[:-1]))


def _is_frozen_bias(name: str, config: TCTNConfig) -> bool:
    return not config.qkv_bias and ".attn.w" in name and name.endswith(".bias")


def init_parameters(
    config: TCTNConfig, seed: Optional[int] = None, dtype=np.float32
) -> TCTNModel:
    """Build a model with fan-in-scaled uniform weights, fully seed-determined.

    Convolution and linear weights are uniform on [-b, b] with
    b = sqrt(1/fan_in); biases start at zero, layer-norm scale at one.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: dict[str, Parameter] = {}
    for name, (shape, kind) in parameter_specs(config).items():
        if kind == "uniform":
            bound = math.sqrt(1.0 / _fan_in(shape))
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif kind == "ones":
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        p = Parameter(name, Tensor(data, requires_grad=True))
        if _is_frozen_bias(name, config):
            p.tensor.requires_grad = False
        params[name] = p
    return TCTNModel(config, params)


def positional_encoding(t_len: int, height: int, width: int, dim: int, dtype=np.float64) -> Tensor:
    """Sinusoidal position channels, identical at every spatial location.

    Frame j (1-based) gets sin(j / 10000^(2d/dim)) in channel 2d and the
    matching cosine in channel 2d+1.
    """
    if dim % 2 != 0:
        raise ConfigurationError("positional encoding needs an even channel count")
    j = np.arange(1, t_len + 1, dtype=np.float64)[:, None]
    exponents = np.arange(0, dim, 2, dtype=np.float64) / dim
    angles = j / np.power(10000.0, exponents)
    table = np.empty((t_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    full = np.broadcast_to(table[:, None, None, :], (t_len, height, width, dim))
    return Tensor(full.astype(dtype))


def fuse_embedding(m: Tensor, p: Tensor) -> Tensor:
    """Element-wise addition of feature map and positional encoding."""
    return add(m, p)


def spatial_embed(frames: Tensor, model: TCTNModel, training: bool = False) -> Tensor:
    """Two same-padded convolutions with a residual shortcut.

    frames: (T, H, W, C) in [0, 1]; returns (T, H, W, D).
    """
    slope = model.config.lrelu_slope
    g = leaky_relu(
        conv2d_same(frames, model.param("embed.conv1.weight"), model.param("embed.conv1.bias")),
        slope,
    )
    h = leaky_relu(
        conv2d_same(g, model.param("embed.conv2.weight"), model.param("embed.conv2.bias")),
        slope,
    )
    return add(h, g)


def transformer_block(
    e: Tensor,
    model: TCTNModel,
    index: int,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """One pre-LN block: causal-conv attention, then causal-conv feed forward.

    Both residual shortcuts start from the un-normalized sublayer input.
    """
    cfg = model.config
    p = lambda name: model.param(f"block{index}.{name}")

    e_norm = layer_norm(e, p("ln1.gamma"), p("ln1.beta"), LAYER_NORM_EPS)
    q = causal_conv3d(e_norm, p("attn.wq.weight"), p("attn.wq.bias"))
    k = causal_conv3d(e_norm, p("attn.wk.weight"), p("attn.wk.bias"))
    v = causal_conv3d(e_norm, p("attn.wv.weight"), p("attn.wv.bias"))
    a = masked_temporal_attention(q, k, v, cfg.dropout_p, training, rng)
    a_proj = channel_linear(a, p("attn.proj.weight"), p("attn.proj.bias"))
    a_proj = dropout(a_proj, cfg.dropout_p, training, rng)
    a_proj.check_finite(f"block {index} attention sublayer")
    s = add(e, a_proj)

    s_norm = layer_norm(s, p("ln2.gamma"), p("ln2.beta"), LAYER_NORM_EPS)
    hidden = leaky_relu(
        causal_conv3d(s_norm, p("ffn.conv1.weight"), p("ffn.conv1.bias")),
        cfg.lrelu_slope,
    )
    f = causal_conv3d(hidden, p("ffn.conv2.weight"), p("ffn.conv2.bias"))
    f = dropout(f, cfg.dropout_p, training, rng)
    f.check_finite(f"block {index} feed-forward sublayer")
    return add(s, f)


def forward_teacher_forced(
    frames: Tensor,
    model: TCTNModel,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Full forward pass on a frame window; output t predicts frame t+1.

    frames: (T, H, W, C); during training T is input_len + horizon - 1,
    at inference it starts at input_len and grows as predictions are
    appended. Returns (T, H, W, C).
    """
    if frames.data.ndim != 4:
        raise ShapeMismatchError(f"frames must be (T, H, W, C), got {frames.shape}")
    t_len = frames.shape[0]
    if t_len < 1:
        raise ShapeMismatchError("need at least one input frame")
    if frames.shape[-1] != model.config.channels:
        raise ShapeMismatchError(
            f"frame channels {frames.shape[-1]} != configured {model.config.channels}"
        )

    m = spatial_embed(frames, model, training)
    if model.config.use_posenc:
        pe = positional_encoding(
            t_len, frames.shape[1], frames.shape[2], model.config.embed_dim, m.dtype
        )
        z = fuse_embedding(m, pe)
    else:
        z = m
    for i in range(model.config.num_blocks):
        z = transformer_block(z, model, i, training, rng)
    return channel_linear(z, model.param("forecaster.weight"), model.param("forecaster.bias"))
