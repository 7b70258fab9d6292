"""Fusion quality metrics and set-level evaluation.

All metrics take (h, w, bands) numpy arrays with values in [0, 1] and
treat the second argument as the reference image where the definition is
asymmetric. Conventions:

  psnr   10 * log10(1 / mse), mse pooled over all bands and pixels;
         identical images give +inf as an explicit sentinel.
  ssim   per band with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
         K2 = 0.03, dynamic range 1, averaged over all valid window
         positions and bands.
  sam    mean per-pixel spectral angle in radians; pixels where either
         spectrum has norm below 1e-8 are skipped.
  ergas  100/r * sqrt(mean_b (rmse_b / mu_b)^2) with mu_b taken from the
         reference image, hence not symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "psnr",
    "ssim",
    "sam",
    "ergas",
    "MetricsReport",
    "evaluate_set",
    "format_metric",
]


def _pair(x, y, name):
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"{name}: shape mismatch {x.shape} vs {y.shape}")
    return x.astype(np.float64), y.astype(np.float64)


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against peak 1.0."""
    x, y = _pair(x, y, "psnr")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _windowed_moments(plane: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Weighted window sums at every fully-valid position."""
    size = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(plane, (size, size))
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(x: np.ndarray, y: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over valid windows and bands, peak 1."""
    x, y = _pair(x, y, "ssim")
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    if x.shape[0] < window or x.shape[1] < window:
        raise ValueError(
            f"ssim: image {x.shape[:2]} smaller than the {window}x{window} window"
        )
    win = _gaussian_window(window, sigma)
    c1, c2 = (k1 * 1.0) ** 2, (k2 * 1.0) ** 2
    scores = []
    for b in range(x.shape[2]):
        px, py = x[:, :, b], y[:, :, b]
        mx = _windowed_moments(px, win)
        my = _windowed_moments(py, win)
        vx = _windowed_moments(px * px, win) - mx * mx
        vy = _windowed_moments(py * py, win) - my * my
        cxy = _windowed_moments(px * py, win) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def sam(x: np.ndarray, y: np.ndarray, eps: float = 1e-8) -> float:
    """Mean spectral angle in radians; degenerate pixels are skipped."""
    x, y = _pair(x, y, "sam")
    if x.ndim != 3:
        raise ValueError(f"sam: want (h, w, bands), got shape {x.shape}")
    ssx = np.sum(x * x, axis=2)
    ssy = np.sum(y * y, axis=2)
    valid = (ssx >= eps * eps) & (ssy >= eps * eps)
    if not np.any(valid):
        raise ValueError("sam: no pixel has spectra above the degeneracy threshold")
    dots = np.sum(x * y, axis=2)
    # single fused sqrt keeps cos == 1 exact when x and y coincide
    cosv = np.clip(dots[valid] / np.sqrt(ssx[valid] * ssy[valid]), -1.0, 1.0)
    return float(np.mean(np.arccos(cosv)))


def ergas(x: np.ndarray, y: np.ndarray, ratio: int) -> float:
    """Relative global dimensionless error; y is the reference image."""
    x, y = _pair(x, y, "ergas")
    if x.ndim != 3:
        raise ValueError(f"ergas: want (h, w, bands), got shape {x.shape}")
    if ratio < 1:
        raise ValueError(f"ergas: ratio must be >= 1, got {ratio}")
    mu = np.mean(y, axis=(0, 1))
    if np.any(np.abs(mu) <= 1e-8):
        raise ValueError("ergas: a reference band mean is (near) zero")
    rmse = np.sqrt(np.mean((x - y) ** 2, axis=(0, 1)))
    return float(100.0 / ratio * np.sqrt(np.mean((rmse / mu) ** 2)))


@dataclass
class MetricsReport:
    """Set-level averages; infinite psnr values are counted separately."""

    psnr: float
    ssim: float
    sam: float
    ergas: float
    n_images: int
    n_psnr_inf: int = 0

    def row(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "sam": self.sam, "ergas": self.ergas}


def evaluate_set(pairs, fused_images, ratio: int | None = None) -> MetricsReport:
    """Average the four metrics of fused images against pair ground truth.

    Finite psnr values are averaged; identical-image sentinels (+inf) are
    excluded from the mean and reported in n_psnr_inf (the mean is +inf
    only if every image is identical to its reference).
    """
    pairs = list(pairs)
    fused_images = list(fused_images)
    if len(pairs) != len(fused_images):
        raise ValueError(
            f"evaluate_set: {len(pairs)} pairs vs {len(fused_images)} fused images"
        )
    if not pairs:
        raise ValueError("evaluate_set: empty input")
    psnrs, ssims, sams, ergs = [], [], [], []
    n_inf = 0
    for pair, fused in zip(pairs, fused_images):
        if pair.hrms_gt is None:
            raise ValueError("evaluate_set: pair has no ground truth")
        r = ratio if ratio is not None else pair.spec.ratio
        gt = pair.hrms_gt
        p = psnr(fused, gt)
        if math.isinf(p):
            n_inf += 1
        else:
            psnrs.append(p)
        ssims.append(ssim(fused, gt))
        sams.append(sam(fused, gt))
        ergs.append(ergas(fused, gt, r))
    mean_psnr = float(np.mean(psnrs)) if psnrs else math.inf
    return MetricsReport(
        psnr=mean_psnr,
        ssim=float(np.mean(ssims)),
        sam=float(np.mean(sams)),
        ergas=float(np.mean(ergs)),
        n_images=len(pairs),
        n_psnr_inf=n_inf,
    )


def format_metric(value: float) -> str:
    """Four-decimal fixed formatting; infinities render as 'inf'."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.4f}"
