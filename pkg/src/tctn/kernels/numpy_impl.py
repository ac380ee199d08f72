"""Pure-numpy kernel implementations (fallback lane).

All convolution kernels operate on pre-padded inputs so padding policy
stays in the calling op. Layout is channels-last throughout:
input (T, H, W, Cin), kernel (kt, kh, kw, Cin, Cout).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3d_forward(xpad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of a padded input with a 3D kernel.

    xpad: (T + kt - 1, H + kh - 1, W + kw - 1, Cin)
    kernel: (kt, kh, kw, Cin, Cout)
    returns: (T, H, W, Cout)
    """
    kt, kh, kw = kernel.shape[:3]
    # windows: (T, H, W, Cin, kt, kh, kw), a view into xpad
    win = sliding_window_view(xpad, (kt, kh, kw), axis=(0, 1, 2))
    return np.einsum("thwiabc,abcio->thwo", win, kernel, optimize=True)


def conv3d_grad_input(gout: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gradient of conv3d_forward w.r.t. the padded input."""
    kt, kh, kw = kernel.shape[:3]
    gpad = np.pad(
        gout, ((kt - 1, kt - 1), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0))
    )
    win = sliding_window_view(gpad, (kt, kh, kw), axis=(0, 1, 2))
    kflip = kernel[::-1, ::-1, ::-1]
    return np.einsum("thwoabc,abcio->thwi", win, kflip, optimize=True)


def conv3d_grad_kernel(xpad: np.ndarray, gout: np.ndarray, kt: int, kh: int, kw: int) -> np.ndarray:
    """Gradient of conv3d_forward w.r.t. the kernel."""
    win = sliding_window_view(xpad, (kt, kh, kw), axis=(0, 1, 2))
    return np.einsum("thwiabc,thwo->abcio", win, gout, optimize=True)


def attn_probs(q: np.ndarray, k: np.ndarray, inv_scale: float) -> np.ndarray:
    """Causal-masked softmax attention weights per spatial location.

    q, k: (T, H, W, D); returns probs (H, W, T, T) with probs[h, w, t, u]
    the weight of timestep u in the output at timestep t; zero for u > t.
    """
    t_len = q.shape[0]
    scores = np.einsum("thwd,uhwd->hwtu", q, k, optimize=True) * inv_scale
    future = np.triu(np.ones((t_len, t_len), dtype=bool), k=1)
    scores[..., future] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def attn_output(probs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Weighted sum of values: (H,W,T,T) x (T,H,W,D) -> (T,H,W,D)."""
    return np.einsum("hwtu,uhwd->thwd", probs, v, optimize=True)


def attn_grad_pv(gout: np.ndarray, probs: np.ndarray, v: np.ndarray):
    """Gradients w.r.t. attention weights and values.

    probs must be the matrix actually multiplied with v in the forward
    pass (post-dropout when dropout was applied).
    """
    gprobs = np.einsum("thwd,uhwd->hwtu", gout, v, optimize=True)
    gv = np.einsum("hwtu,thwd->uhwd", probs, gout, optimize=True)
    return gprobs, gv


def attn_grad_qk(gscores: np.ndarray, q: np.ndarray, k: np.ndarray, inv_scale: float):
    """Gradients w.r.t. query and key given score gradients (H,W,T,T)."""
    gq = np.einsum("hwtu,uhwd->thwd", gscores, k, optimize=True) * inv_scale
    gk = np.einsum("hwtu,thwd->uhwd", gscores, q, optimize=True) * inv_scale
    return gq, gk
