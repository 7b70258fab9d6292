"""Classical pan-sharpening baselines.

Each method takes the low-res cube (m, n, bands) and the pan plane
(M, N, 1) with M = r*m, and returns FusionResult with the sharpened cube
on the pan grid, clipped to [0, 1]. U denotes the bicubic upsample of
the cube; I its band mean.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .image_ops import resize_hwc

__all__ = [
    "FusionResult",
    "bicubic_baseline",
    "ihs_fuse",
    "brovey_fuse",
    "hpf_fuse",
    "sfim_fuse",
    "box_blur",
    "BASELINE_METHODS",
]

EPS = 1e-6


@dataclass
class FusionResult:
    image: np.ndarray
    method: str
    runtime: float


def _prepare(lrms: np.ndarray, pan: np.ndarray):
    lrms = np.asarray(lrms, dtype=np.float64)
    pan = np.asarray(pan, dtype=np.float64)
    if pan.ndim == 3:
        if pan.shape[2] != 1:
            raise ValueError(f"pan must have one band, got shape {pan.shape}")
        pan = pan[:, :, 0]
    if lrms.ndim != 3:
        raise ValueError(f"lrms must be (h, w, bands), got shape {lrms.shape}")
    if pan.shape[0] % lrms.shape[0] or pan.shape[1] % lrms.shape[1]:
        raise ValueError(
            f"pan size {pan.shape} is not an integer multiple of lrms {lrms.shape[:2]}"
        )
    r = pan.shape[0] // lrms.shape[0]
    if pan.shape[1] // lrms.shape[1] != r:
        raise ValueError(f"inconsistent ratios between axes: {pan.shape} vs {lrms.shape[:2]}")
    return lrms, pan, r


def box_blur(plane: np.ndarray, size: int) -> np.ndarray:
    """Mean over the window clipped at the borders (constants survive).

    Implemented with a summed-area table; each output divides by the
    actual number of in-image pixels under its window.
    """
    if size % 2 == 0 or size < 1:
        raise ValueError(f"box size must be odd and positive, got {size}")
    h, w = plane.shape
    half = size // 2
    sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    sat[1:, 1:] = np.cumsum(np.cumsum(plane, axis=0), axis=1)
    y0 = np.clip(np.arange(h) - half, 0, h)
    y1 = np.clip(np.arange(h) + half + 1, 0, h)
    x0 = np.clip(np.arange(w) - half, 0, w)
    x1 = np.clip(np.arange(w) + half + 1, 0, w)
    sums = (sat[y1[:, None], x1[None, :]] - sat[y0[:, None], x1[None, :]]
            - sat[y1[:, None], x0[None, :]] + sat[y0[:, None], x0[None, :]])
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return sums / counts


def _timed(name, fn):
    t0 = time.perf_counter()
    img = np.clip(fn(), 0.0, 1.0)
    return FusionResult(image=img.astype(np.float32), method=name,
                        runtime=time.perf_counter() - t0)


def bicubic_baseline(lrms: np.ndarray, pan: np.ndarray) -> FusionResult:
    """Bicubic upsampling only; the pan image is ignored."""
    lrms, pan, r = _prepare(lrms, pan)
    return _timed("bicubic", lambda: resize_hwc(lrms, r))


def ihs_fuse(lrms: np.ndarray, pan: np.ndarray) -> FusionResult:
    """Intensity substitution: U + (pan - mean_bands(U))."""
    lrms, pan, r = _prepare(lrms, pan)
    if lrms.shape[2] < 3:
        raise ValueError(f"ihs needs at least 3 bands, got {lrms.shape[2]}")

    def run():
        u = resize_hwc(lrms, r)
        return u + (pan - u.mean(axis=2))[:, :, None]

    return _timed("ihs", run)


def brovey_fuse(lrms: np.ndarray, pan: np.ndarray) -> FusionResult:
    """Multiplicative injection: U_b * pan / (mean_bands(U) + eps)."""
    lrms, pan, r = _prepare(lrms, pan)

    def run():
        u = resize_hwc(lrms, r)
        return u * (pan / (u.mean(axis=2) + EPS))[:, :, None]

    return _timed("brovey", run)


def hpf_fuse(lrms: np.ndarray, pan: np.ndarray) -> FusionResult:
    """High-pass injection: U + (pan - boxblur(pan, 2r+1))."""
    lrms, pan, r = _prepare(lrms, pan)

    def run():
        u = resize_hwc(lrms, r)
        return u + (pan - box_blur(pan, 2 * r + 1))[:, :, None]

    return _timed("hpf", run)


def sfim_fuse(lrms: np.ndarray, pan: np.ndarray) -> FusionResult:
    """Smoothing-filter modulation: U_b * pan / (boxblur(pan, 2r+1) + eps)."""
    lrms, pan, r = _prepare(lrms, pan)

    def run():
        u = resize_hwc(lrms, r)
        return u * (pan / (box_blur(pan, 2 * r + 1) + EPS))[:, :, None]

    return _timed("sfim", run)


BASELINE_METHODS = {
    "bicubic": bicubic_baseline,
    "ihs": ihs_fuse,
    "brovey": brovey_fuse,
    "hpf": hpf_fuse,
    "sfim": sfim_fuse,
}
