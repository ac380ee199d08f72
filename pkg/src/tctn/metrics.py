"""Frame-quality metrics: PSNR, SSIM, and MAE on [0, 1] grayscale frames.

MAE is measured as the per-frame sum of absolute pixel differences (so a
64x64 frame differing by 1 everywhere scores 4096). SSIM uses the standard
11x11 Gaussian window with sigma 1.5 and constants K1=0.01, K2=0.03 at
data range 1.0 over valid (fully inside) windows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ShapeMismatchError

PSNR_CAP_DB = 100.0


def _as_frame(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    return arr


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p, t = _as_frame(pred), _as_frame(truth)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"metric operands differ in shape: {p.shape} vs {t.shape}")
    return p, t


def psnr(pred, truth) -> float:
    """Peak signal-to-noise ratio in dB at peak 1.0, capped at 100 dB."""
    p, t = _check_pair(pred, truth)
    mse = float(np.mean((p - t) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def mae(pred, truth) -> float:
    """Sum of absolute pixel differences over one frame."""
    p, t = _check_pair(pred, truth)
    return float(np.abs(p - t).sum())


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter2d(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # separable valid-mode correlation
    out = sliding_window_view(img, window.size, axis=0) @ window
    return sliding_window_view(out, window.size, axis=1) @ window


def ssim(
    pred,
    truth,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Mean structural similarity over sliding Gaussian windows."""
    p, t = _check_pair(pred, truth)
    if p.ndim != 2:
        raise ShapeMismatchError(f"ssim expects single-channel 2-D frames, got {p.shape}")
    if min(p.shape) < window_size:
        raise ConfigurationError(
            f"frame {p.shape} smaller than the {window_size}x{window_size} ssim window"
        )
    window = _gaussian_window(window_size, sigma)
    mu_p = _filter2d(p, window)
    mu_t = _filter2d(t, window)
    var_p = _filter2d(p * p, window) - mu_p * mu_p
    var_t = _filter2d(t * t, window) - mu_t * mu_t
    cov = _filter2d(p * t, window) - mu_p * mu_t
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2)
    return float(np.mean(num / den))


@dataclass
class FrameMetrics:
    psnr: float
    ssim: float
    mae: float


@dataclass
class MetricReport:
    """Per-horizon-step metrics plus their mean over the horizon."""

    per_frame: list[FrameMetrics]
    aggregate: FrameMetrics

    def __post_init__(self):
        for fm in self.per_frame:
            if not -1.0 - 1e-9 <= fm.ssim <= 1.0 + 1e-9:
                raise ConfigurationError(f"ssim {fm.ssim} outside [-1, 1]")
            if fm.mae < 0.0:
                raise ConfigurationError(f"negative mae {fm.mae}")

    @classmethod
    def from_per_frame(cls, per_frame: list[FrameMetrics]) -> "MetricReport":
        agg = FrameMetrics(
            psnr=float(np.mean([m.psnr for m in per_frame])),
            ssim=float(np.mean([m.ssim for m in per_frame])),
            mae=float(np.mean([m.mae for m in per_frame])),
        )
        return cls(per_frame, agg)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame_index", "psnr", "ssim", "mae"])
            for i, m in enumerate(self.per_frame, start=1):
                writer.writerow([i, repr(m.psnr), repr(m.ssim), repr(m.mae)])
            writer.writerow(["mean", repr(self.aggregate.psnr), repr(self.aggregate.ssim), repr(self.aggregate.mae)])
