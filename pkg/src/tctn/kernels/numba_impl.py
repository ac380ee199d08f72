"""Numba kernel implementations (accelerated lane).

Same contracts as numpy_impl. Convolutions gather per-timestep im2col
buffers with tight explicit loops and feed one BLAS gemm per timestep;
attention stays in plain loops over the visible (causal) region. All
loops are single-threaded on purpose: reduction order is fixed, so
results are bit-reproducible regardless of thread settings.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _fill_im2col(xpad, t, kt, kh, kw, height, width, ci, buf):
    # buf: (height*width, kt*kh*kw*ci), row r = flattened taps of pixel r
    for h in range(height):
        base = h * width
        col = 0
        for a in range(kt):
            for b in range(kh):
                plane = xpad[t + a, h + b]
                for c in range(kw):
                    for w in range(width):
                        src = plane[c + w]
                        dst = buf[base + w]
                        for i in range(ci):
                            dst[col + i] = src[i]
                    col += ci


@njit(cache=True)
def conv3d_forward(xpad, kernel):
    kt, kh, kw, ci, co = kernel.shape
    t_len = xpad.shape[0] - kt + 1
    height = xpad.shape[1] - kh + 1
    width = xpad.shape[2] - kw + 1
    kmat = np.ascontiguousarray(kernel).reshape(kt * kh * kw * ci, co)
    out = np.empty((t_len, height, width, co), xpad.dtype)
    buf = np.empty((height * width, kt * kh * kw * ci), xpad.dtype)
    for t in range(t_len):
        _fill_im2col(xpad, t, kt, kh, kw, height, width, ci, buf)
        out[t] = np.dot(buf, kmat).reshape(height, width, co)
    return out


def conv3d_grad_input(gout, kernel):
    """Gradient w.r.t. the padded input: full correlation with the
    spatially/temporally flipped, channel-transposed kernel."""
    kt, kh, kw = kernel.shape[:3]
    kflip = np.ascontiguousarray(kernel[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3))
    gpad = np.pad(
        gout, ((kt - 1, kt - 1), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0))
    )
    return conv3d_forward(gpad, kflip)


@njit(cache=True)
def conv3d_grad_kernel(xpad, gout, kt, kh, kw):
    t_len, height, width, co = gout.shape
    ci = xpad.shape[3]
    taps = kt * kh * kw * ci
    gk = np.zeros((taps, co), xpad.dtype)
    buf = np.empty((height * width, taps), xpad.dtype)
    for t in range(t_len):
        _fill_im2col(xpad, t, kt, kh, kw, height, width, ci, buf)
        g2 = np.ascontiguousarray(gout[t]).reshape(height * width, co)
        gk += np.dot(buf.T, g2)
    return gk.reshape(kt, kh, kw, ci, co)


@njit(cache=True)
def attn_probs(q, k, inv_scale):
    t_len, height, width, dim = q.shape
    probs = np.zeros((height, width, t_len, t_len), q.dtype)
    row = np.empty(t_len, q.dtype)
    for h in range(height):
        for w in range(width):
            for t in range(t_len):
                # scores over visible timesteps u <= t only
                hi = -np.inf
                for u in range(t + 1):
                    s = 0.0
                    for d in range(dim):
                        s += q[t, h, w, d] * k[u, h, w, d]
                    s *= inv_scale
                    row[u] = s
                    if s > hi:
                        hi = s
                total = 0.0
                for u in range(t + 1):
                    e = np.exp(row[u] - hi)
                    row[u] = e
                    total += e
                for u in range(t + 1):
                    probs[h, w, t, u] = row[u] / total
    return probs


@njit(cache=True)
def attn_output(probs, v):
    height, width, t_len, _ = probs.shape
    dim = v.shape[3]
    out = np.zeros((t_len, height, width, dim), v.dtype)
    for h in range(height):
        for w in range(width):
            for t in range(t_len):
                for u in range(t + 1):
                    p = probs[h, w, t, u]
                    if p != 0.0:
                        for d in range(dim):
                            out[t, h, w, d] += p * v[u, h, w, d]
    return out


@njit(cache=True)
def attn_grad_pv(gout, probs, v):
    height, width, t_len, _ = probs.shape
    dim = v.shape[3]
    gprobs = np.zeros((height, width, t_len, t_len), gout.dtype)
    gv = np.zeros((t_len, height, width, dim), gout.dtype)
    for h in range(height):
        for w in range(width):
            for t in range(t_len):
                for u in range(t + 1):
                    acc = 0.0
                    for d in range(dim):
                        acc += gout[t, h, w, d] * v[u, h, w, d]
                    gprobs[h, w, t, u] = acc
                    p = probs[h, w, t, u]
                    if p != 0.0:
                        for d in range(dim):
                            gv[u, h, w, d] += p * gout[t, h, w, d]
    return gprobs, gv


@njit(cache=True)
def attn_grad_qk(gscores, q, k, inv_scale):
    t_len, height, width, dim = q.shape
    gq = np.zeros((t_len, height, width, dim), q.dtype)
    gk = np.zeros((t_len, height, width, dim), q.dtype)
    for h in range(height):
        for w in range(width):
            for t in range(t_len):
                for u in range(t + 1):
                    g = gscores[h, w, t, u] * inv_scale
                    if g != 0.0:
                        for d in range(dim):
                            gq[t, h, w, d] += g * k[u, h, w, d]
                            gk[u, h, w, d] += g * q[t, h, w, d]
    return gq, gk
