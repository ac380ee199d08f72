"""Dense tensors with reverse-mode automatic differentiation.

The operation set is exactly what the frame-prediction network needs:
same-padded 2D convolution, left-padded (causal) 3D temporal convolution,
causal-masked temporal attention, layer norm, leaky ReLU, dropout, a
per-position channel map, and elementwise/reduction glue.

Recording model: ops executed while a Tape is active (``with Tape():``)
append backward rules to it; ``backward(loss, tape)`` replays them in
reverse execution order. Gradients accumulate into ``Tensor.grad`` across
backward calls until reset. Tensors are treated as immutable once recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    ConfigurationError,
    NumericError,
    OracleError,
    ShapeMismatchError,
)


class Tensor:
    """N-dimensional float array with optional gradient tracking.

    ``data`` is row-major float32 or float64 (other inputs are coerced to
    float64). ``grad``, once populated, always matches ``data`` in shape.
    Non-finite values are an error state; they are checked and surfaced
    at attention, block, and loss boundaries rather than after every op.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, context: str = "tensor") -> "Tensor":
        if not np.isfinite(self.data).all():
            raise NumericError(f"non-finite values in {context}")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Parameter:
    """Named trainable tensor; the name encodes its role for checkpoints."""

    name: str
    tensor: Tensor

    def __post_init__(self):
        self.tensor.requires_grad = True


class _Record:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed ops; backward replays it in reverse."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._records)


def _make_output(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = _TAPE_STACK[-1] if _TAPE_STACK else None
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape._records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def _require_tensor(*ts) -> None:
    for t in ts:
        if not isinstance(t, Tensor):
            raise TypeError(f"expected Tensor, got {type(t).__name__}")


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / reduction glue
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, b)
    _require_same_shape(a, b, "add")
    return _make_output(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, b)
    _require_same_shape(a, b, "sub")
    return _make_output(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_tensor(a, b)
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make_output(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    _require_tensor(a)
    return _make_output(a.data * s, (a,), lambda g: (g * s,))


def sum_all(a: Tensor) -> Tensor:
    _require_tensor(a)
    shape = a.shape
    return _make_output(
        a.data.sum(), (a,), lambda g: (np.broadcast_to(g, shape),)
    )


def mean_all(a: Tensor) -> Tensor:
    _require_tensor(a)
    n = a.data.size
    return _make_output(
        a.data.mean(), (a,), lambda g: (np.broadcast_to(g / n, a.shape),)
    )


def time_slice(a: Tensor, start: int, stop: Optional[int] = None) -> Tensor:
    """Slice along the leading (time) axis; gradient zero-pads the rest."""
    _require_tensor(a)
    t_len = a.shape[0]
    lo, hi, _ = slice(start, stop).indices(t_len)
    if hi <= lo:
        raise ShapeMismatchError(f"empty time slice [{start}:{stop}] of length {t_len}")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[lo:hi] = g
        return (full,)

    return _make_output(a.data[lo:hi].copy(), (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    _require_tensor(a)
    if slope < 0:
        raise ConfigurationError(f"leaky_relu slope must be >= 0, got {slope}")
    nonneg = a.data >= 0
    out = np.where(nonneg, a.data, a.data * slope)

    def bwd(g):
        return (np.where(nonneg, g, g * slope),)

    return _make_output(out, (a,), bwd)


def dropout(a: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval."""
    _require_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ConfigurationError("dropout with p > 0 in training mode requires an rng")
    mask = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return _make_output(a.data * mask, (a,), lambda g: (g * mask,))


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing channel axis with biased variance."""
    _require_tensor(a, gamma, beta)
    dim = a.shape[-1] if a.data.ndim else 0
    if dim == 0:
        raise ConfigurationError("layer_norm needs a non-empty trailing axis")
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeMismatchError(
            f"layer_norm scale/shift must have shape ({dim},), got {gamma.shape}/{beta.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def bwd(g):
        axes = tuple(range(g.ndim - 1))
        gb = g.sum(axis=axes)
        gg = (g * xhat).sum(axis=axes)
        gxh = g * gamma.data
        mean_g = gxh.mean(axis=-1, keepdims=True)
        mean_gx = (gxh * xhat).mean(axis=-1, keepdims=True)
        gx = inv_std * (gxh - mean_g - xhat * mean_gx)
        return gx, gg, gb

    return _make_output(out, (a, gamma, beta), bwd)


def channel_linear(a: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-position channel mixing: (..., Cin) @ (Cin, Cout) + (Cout,)."""
    _require_tensor(a, weight, bias)
    if weight.data.ndim != 2 or a.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError(
            f"channel_linear: input channels {a.shape[-1:]} vs weight {weight.shape}"
        )
    if bias.shape != (weight.shape[1],):
        raise ShapeMismatchError(f"channel_linear bias shape {bias.shape}")
    out = a.data @ weight.data + bias.data

    def bwd(g):
        ga = g @ weight.data.T
        gw = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return ga, gw, gb

    return _make_output(out, (a, weight, bias), bwd)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def _check_conv_input(x: Tensor, kernel: Tensor, bias: Tensor, kdims: int) -> None:
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"conv input must be (T, H, W, C), got {x.shape}")
    if kernel.data.ndim != kdims + 2:
        raise ShapeMismatchError(f"conv kernel rank {kernel.data.ndim}, expected {kdims + 2}")
    kh, kw = kernel.shape[kdims - 2], kernel.shape[kdims - 1]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"spatial kernel extents must be odd, got {kh}x{kw}")
    if x.shape[-1] != kernel.shape[kdims]:
        raise ShapeMismatchError(
            f"input channels {x.shape[-1]} vs kernel channels {kernel.shape[kdims]}"
        )
    if bias.shape != (kernel.shape[-1],):
        raise ShapeMismatchError(f"bias shape {bias.shape} vs Cout {kernel.shape[-1]}")


def conv2d_same(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Frame-wise same-padded 2D cross-correlation, no temporal mixing.

    x: (T, H, W, Cin), kernel: (kh, kw, Cin, Cout), bias: (Cout,).
    """
    _require_tensor(x, kernel, bias)
    _check_conv_input(x, kernel, bias, kdims=2)
    _, height, width, _ = x.shape
    kh, kw, cin, cout = kernel.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    # kernels need one dtype on both operands
    common = np.result_type(x.data, kernel.data, bias.data)
    xpad = np.pad(
        x.data.astype(common, copy=False), ((0, 0), (ph, ph), (pw, pw), (0, 0))
    )
    k5 = np.ascontiguousarray(kernel.data.reshape(1, kh, kw, cin, cout), dtype=common)
    out = kernels.conv3d_forward(xpad, k5) + bias.data

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=common)
        gx = kernels.conv3d_grad_input(g, k5)[:, ph:ph + height, pw:pw + width, :]
        gk = kernels.conv3d_grad_kernel(xpad, g, 1, kh, kw).reshape(kh, kw, cin, cout)
        return gx, gk, g.sum(axis=(0, 1, 2))

    return _make_output(out, (x, kernel, bias), bwd)


def causal_conv3d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3D temporal convolution over only current and past frames.

    Time is left-padded with kt-1 zero frames, so output[t] depends on
    input[t-kt+1 .. t] and the time extent is preserved. Spatially
    same-padded. x: (T, H, W, Cin), kernel: (kt, kh, kw, Cin, Cout).
    """
    _require_tensor(x, kernel, bias)
    _check_conv_input(x, kernel, bias, kdims=3)
    _, height, width, _ = x.shape
    kt, kh, kw = kernel.shape[:3]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    common = np.result_type(x.data, kernel.data, bias.data)
    xpad = np.pad(
        x.data.astype(common, copy=False), ((kt - 1, 0), (ph, ph), (pw, pw), (0, 0))
    )
    kdata = np.ascontiguousarray(kernel.data, dtype=common)
    out = kernels.conv3d_forward(xpad, kdata) + bias.data

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=common)
        gx = kernels.conv3d_grad_input(g, kdata)[kt - 1:, ph:ph + height, pw:pw + width, :]
        gk = kernels.conv3d_grad_kernel(xpad, g, kt, kh, kw)
        return gx, gk, g.sum(axis=(0, 1, 2))

    return _make_output(out, (x, kernel, bias), bwd)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def masked_temporal_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Single-head scaled dot-product attention over the time axis.

    Each spatial location attends independently: scores between timesteps
    are channel dot products scaled by 1/sqrt(D), entries looking at the
    future are masked out before the softmax, and the output at time t is
    the weighted sum of values at times <= t. Optional dropout hits the
    post-softmax weight rows during training.
    """
    _require_tensor(q, k, v)
    _require_same_shape(q, k, "attention q/k")
    _require_same_shape(q, v, "attention q/v")
    if q.data.ndim != 4:
        raise ShapeMismatchError(f"attention operands must be (T, H, W, D), got {q.shape}")
    dim = q.shape[-1]
    if dim == 0:
        raise ConfigurationError("attention channel dimension must be positive")
    if not 0.0 <= dropout_p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {dropout_p}")

    inv_scale = 1.0 / math.sqrt(dim)
    common = np.result_type(q.data, k.data, v.data)
    qd = q.data.astype(common, copy=False)
    kd = k.data.astype(common, copy=False)
    vd = v.data.astype(common, copy=False)
    probs = kernels.attn_probs(qd, kd, inv_scale)
    if not np.isfinite(probs).all():
        raise NumericError("non-finite attention scores")

    mask = None
    if training and dropout_p > 0.0:
        if rng is None:
            raise ConfigurationError("attention dropout in training mode requires an rng")
        mask = (rng.random(probs.shape) >= dropout_p).astype(probs.dtype) / (1.0 - dropout_p)
        dropped = probs * mask
    else:
        dropped = probs
    out = kernels.attn_output(dropped, vd)

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=common)
        gdropped, gv = kernels.attn_grad_pv(g, dropped, vd)
        gprobs = gdropped * mask if mask is not None else gdropped
        row = (gprobs * probs).sum(axis=-1, keepdims=True)
        gscores = probs * (gprobs - row)
        gq, gk = kernels.attn_grad_qk(gscores, qd, kd, inv_scale)
        return gq, gk, gv

    return _make_output(out, (q, k, v), bwd)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grads of every requires_grad ancestor of a scalar loss.

    Repeated calls without zero_grad accumulate (grads add up exactly).
    """
    _require_tensor(loss)
    if loss.data.size != 1:
        raise ShapeMismatchError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape._records):
        gout = grads.get(id(rec.output))
        if gout is None:
            continue
        gins = rec.backward_fn(gout)
        for t, gi in zip(rec.inputs, gins):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            seen[key] = t
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for key, t in seen.items():
        g = grads.get(key)
        if g is None:
            continue
        if g.shape != t.shape:
            g = np.broadcast_to(g, t.shape)
        t.grad = np.array(g) if t.grad is None else t.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-4,
    sample: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error of f's analytic gradient at x vs central differences.

    f must be scalar-valued and deterministic (dropout off); determinism is
    verified by evaluating twice. Error per element is
    |analytic - numeric| / max(1, |numeric|). ``sample`` limits the check
    to a random subset of coordinates (for large parameter groups).
    Runs in double precision regardless of x's dtype.
    """
    base = np.array(x.data, dtype=np.float64)

    def evaluate(arr: np.ndarray) -> float:
        out = f(Tensor(arr.copy()))
        _require_tensor(out)
        if out.data.size != 1:
            raise ShapeMismatchError("finite_diff_check needs a scalar-valued f")
        return out.item()

    if evaluate(base) != evaluate(base):
        raise OracleError("finite_diff_check requires a deterministic f")

    probe = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
    if y.data.size != 1:
        raise ShapeMismatchError("finite_diff_check needs a scalar-valued f")
    backward(y, tape)
    analytic = probe.grad
    if analytic is None:
        raise OracleError("f does not depend on x; nothing to check")

    indices = np.arange(base.size)
    if sample is not None and sample < base.size:
        gen = rng if rng is not None else np.random.default_rng(0)
        indices = gen.choice(base.size, size=sample, replace=False)

    worst = 0.0
    flat = base.reshape(-1)
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        f_plus = evaluate(base)
        flat[i] = orig - step
        f_minus = evaluate(base)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        err = abs(float(analytic.reshape(-1)[i]) - numeric) / max(1.0, abs(numeric))
        if err > worst:
            worst = err
    return worst
