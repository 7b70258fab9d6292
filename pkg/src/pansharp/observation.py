"""Observation models tying the three image levels together.

A high-resolution multispectral cube H (h, w, bands) is observed two
ways: spatially, as lrms = decimate(blur(H)) with a circular blur and
phase-0 decimation by an integer ratio, and spectrally, as
pan = H @ weights with nonnegative weights summing to one. The module
also provides Wald-protocol degradation (shift everything down one
resolution level so the original cube becomes ground truth), a seeded
synthetic scene generator, per-patch normalization, and the on-disk
dataset layout built from .ten files plus a spec.json.

Images at this layer are plain numpy arrays in (h, w, bands) order;
only the network's training path wraps values in autodiff tensors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image_ops import resize_hwc
from .tensor import load_ten, save_ten

__all__ = [
    "DegradationSpec",
    "ImagePair",
    "gaussian_kernel",
    "circular_correlate",
    "apply_blur_downsample",
    "apply_spectral_response",
    "blur_downsample_adjoint",
    "spectral_response_adjoint",
    "wald_degrade",
    "synthesize_scene",
    "normalize",
    "save_dataset",
    "load_split",
    "load_spec",
]

NORMALIZATION = "per-patch-per-modality-max"


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Odd-sized 2-D Gaussian, normalized to sum exactly to one."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"gaussian kernel size must be odd and positive, got {size}")
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


@dataclass(frozen=True)
class DegradationSpec:
    """Blur kernel, decimation ratio, and spectral weights of one sensor pair.

    blur: odd square kernel summing to 1 (tolerance 1e-6).
    ratio: integer >= 2 between the two spatial grids.
    spectral: nonnegative per-band weights summing to 1.
    """

    blur: np.ndarray
    ratio: int
    spectral: np.ndarray

    def __post_init__(self):
        blur = np.asarray(self.blur, dtype=np.float64)
        spectral = np.asarray(self.spectral, dtype=np.float64)
        object.__setattr__(self, "blur", blur)
        object.__setattr__(self, "spectral", spectral)
        if blur.ndim != 2 or blur.shape[0] != blur.shape[1]:
            raise ValueError(f"blur must be square, got shape {blur.shape}")
        if blur.shape[0] % 2 == 0:
            raise ValueError(f"blur size must be odd, got {blur.shape[0]}")
        if abs(float(blur.sum()) - 1.0) > 1e-6:
            raise ValueError(f"blur must sum to 1, got {float(blur.sum()):.8f}")
        if int(self.ratio) != self.ratio or self.ratio < 2:
            raise ValueError(f"ratio must be an integer >= 2, got {self.ratio}")
        object.__setattr__(self, "ratio", int(self.ratio))
        if spectral.ndim != 1:
            raise ValueError(f"spectral weights must be 1-D, got shape {spectral.shape}")
        if np.any(spectral < 0):
            raise ValueError("spectral weights must be nonnegative")
        if abs(float(spectral.sum()) - 1.0) > 1e-6:
            raise ValueError(f"spectral weights must sum to 1, got {float(spectral.sum()):.8f}")

    @property
    def bands(self) -> int:
        return self.spectral.shape[0]

    @classmethod
    def default(cls, bands: int = 4, ratio: int = 4, blur_size: int = 7,
                blur_sigma: float = 2.0) -> "DegradationSpec":
        return cls(blur=gaussian_kernel(blur_size, blur_sigma), ratio=ratio,
                   spectral=np.full(bands, 1.0 / bands))

    def to_json(self) -> dict:
        return {
            "blur": self.blur.tolist(),
            "ratio": self.ratio,
            "spectral": self.spectral.tolist(),
            "normalization": NORMALIZATION,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DegradationSpec":
        return cls(blur=np.asarray(doc["blur"], dtype=np.float64),
                   ratio=int(doc["ratio"]),
                   spectral=np.asarray(doc["spectral"], dtype=np.float64))


def circular_correlate(plane: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Cross-correlation with periodic boundary: out[p] = sum k[t] * x[p + t - c]."""
    if plane.ndim != 2:
        raise ValueError(f"circular_correlate: want (h, w), got shape {plane.shape}")
    k = kern.shape[0]
    c = k // 2
    out = np.zeros(plane.shape, dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            wt = kern[dy, dx]
            if wt != 0.0:
                out += wt * np.roll(plane, (-(dy - c), -(dx - c)), axis=(0, 1))
    return out


def _check_hwc(img: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"{name}: want (h, w, bands), got shape {img.shape}")
    return img


def apply_blur_downsample(hrms: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Circular blur then keep every ratio-th pixel starting at offset 0."""
    hrms = _check_hwc(hrms, "apply_blur_downsample")
    h, w, _ = hrms.shape
    r = spec.ratio
    if h % r or w % r:
        raise ValueError(f"spatial size {h}x{w} not divisible by ratio {r}")
    out = np.stack([circular_correlate(hrms[:, :, b], spec.blur)[::r, ::r]
                    for b in range(hrms.shape[2])], axis=2)
    return out.astype(hrms.dtype)


def blur_downsample_adjoint(lr: np.ndarray, spec: DegradationSpec,
                            hr_shape: tuple) -> np.ndarray:
    """Exact adjoint of apply_blur_downsample.

    Zero insertion onto the high-res grid, then circular correlation with
    the flipped kernel.
    """
    lr = _check_hwc(lr, "blur_downsample_adjoint")
    h, w = hr_shape[0], hr_shape[1]
    r = spec.ratio
    if lr.shape[0] * r != h or lr.shape[1] * r != w:
        raise ValueError(
            f"adjoint: low-res {lr.shape[:2]} does not map to high-res {(h, w)} at ratio {r}"
        )
    flipped = spec.blur[::-1, ::-1]
    out = np.zeros((h, w, lr.shape[2]), dtype=np.float64)
    for b in range(lr.shape[2]):
        up = np.zeros((h, w), dtype=np.float64)
        up[::r, ::r] = lr[:, :, b]
        out[:, :, b] = circular_correlate(up, flipped)
    return out.astype(lr.dtype)


def apply_spectral_response(hrms: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Weighted band average: (h, w, bands) -> (h, w, 1)."""
    hrms = _check_hwc(hrms, "apply_spectral_response")
    if hrms.shape[2] != spec.bands:
        raise ValueError(
            f"image has {hrms.shape[2]} bands, spectral weights have {spec.bands}"
        )
    return (hrms.astype(np.float64) @ spec.spectral)[:, :, None].astype(hrms.dtype)


def spectral_response_adjoint(pan: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Exact adjoint of apply_spectral_response: broadcast against weights."""
    pan = np.asarray(pan)
    if pan.ndim == 3:
        if pan.shape[2] != 1:
            raise ValueError(f"pan must have one band, got shape {pan.shape}")
        pan = pan[:, :, 0]
    return (pan[:, :, None].astype(np.float64) * spec.spectral[None, None, :]).astype(pan.dtype)


@dataclass
class ImagePair:
    """One fusion sample: low-res cube, pan plane, optional ground truth."""

    lrms: np.ndarray
    pan: np.ndarray
    hrms_gt: np.ndarray | None
    spec: DegradationSpec

    def __post_init__(self):
        self.lrms = _check_hwc(self.lrms, "lrms")
        self.pan = np.asarray(self.pan)
        if self.pan.ndim == 2:
            self.pan = self.pan[:, :, None]
        if self.pan.ndim != 3 or self.pan.shape[2] != 1:
            raise ValueError(f"pan must be (h, w, 1), got shape {self.pan.shape}")
        r = self.spec.ratio
        if (self.lrms.shape[0] * r, self.lrms.shape[1] * r) != self.pan.shape[:2]:
            raise ValueError(
                f"pan {self.pan.shape[:2]} is not ratio {r} times lrms {self.lrms.shape[:2]}"
            )
        if self.hrms_gt is not None:
            self.hrms_gt = _check_hwc(self.hrms_gt, "hrms_gt")
            if self.hrms_gt.shape[:2] != self.pan.shape[:2]:
                raise ValueError(
                    f"gt {self.hrms_gt.shape[:2]} must match pan {self.pan.shape[:2]}"
                )


def wald_degrade(hrms: np.ndarray, pan: np.ndarray, spec: DegradationSpec) -> ImagePair:
    """Shift a real (hrms, pan) pair down one resolution level.

    Both observed images are blur-downsampled by the ratio; the original
    hrms becomes the ground truth, which nothing but loss and metrics may
    read.
    """
    hrms = _check_hwc(hrms, "wald_degrade hrms")
    pan = np.asarray(pan)
    if pan.ndim == 2:
        pan = pan[:, :, None]
    r = spec.ratio
    if pan.shape[0] != hrms.shape[0] * r or pan.shape[1] != hrms.shape[1] * r:
        raise ValueError(
            f"pan {pan.shape[:2]} must be ratio {r} times hrms {hrms.shape[:2]}"
        )
    lrms_input = apply_blur_downsample(hrms, spec)
    pan_input = apply_blur_downsample(pan, spec)
    return ImagePair(lrms=lrms_input, pan=pan_input, hrms_gt=hrms, spec=spec)


def _smooth_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-frequency random field in [0, 1] via repeated circular smoothing."""
    field = rng.standard_normal((h, w))
    kern = gaussian_kernel(min(9, h - (1 - h % 2)), 2.5)
    for _ in range(3):
        field = circular_correlate(field, kern)
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return (field - lo) / (hi - lo)


def synthesize_scene(seed: int, height: int, width: int, bands: int,
                     spec: DegradationSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic synthetic world: returns (hrms, pan, lrms).

    The cube is a smooth shared field modulated per band plus rectangles
    and disks whose intensities are correlated but not proportional
    across bands, then clipped to [0, 1]. pan and lrms are derived from
    the clipped cube with the exact observation operators, so every
    sample is self-consistent.
    """
    if bands != spec.bands:
        raise ValueError(f"bands={bands} but spec carries {spec.bands} spectral weights")
    if height % spec.ratio or width % spec.ratio:
        raise ValueError(
            f"scene {height}x{width} not divisible by ratio {spec.ratio}"
        )
    rng = np.random.default_rng(seed)
    base = _smooth_field(rng, height, width)
    gains = rng.uniform(0.5, 1.0, size=bands)
    offsets = rng.uniform(0.0, 0.25, size=bands)
    hrms = offsets[None, None, :] + gains[None, None, :] * base[:, :, None]
    hrms += 0.05 * np.stack(
        [_smooth_field(rng, height, width) - 0.5 for _ in range(bands)], axis=2
    )

    yy, xx = np.mgrid[0:height, 0:width]
    n_shapes = int(rng.integers(6, 13))
    for _ in range(n_shapes):
        cy = float(rng.uniform(0, height))
        cx = float(rng.uniform(0, width))
        size = float(rng.uniform(max(2.0, height / 16), height / 3))
        intensity = float(rng.uniform(0.15, 0.85))
        band_mix = np.clip(0.55 + 0.45 * rng.uniform(0, 1, size=bands), 0.0, 1.3)
        alpha = float(rng.uniform(0.6, 1.0))
        if rng.uniform() < 0.5:
            mask = (np.abs(yy - cy) < size / 2) & (np.abs(xx - cx) < size / 2)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < (size / 2) ** 2
        for b in range(bands):
            plane = hrms[:, :, b]
            plane[mask] = (1 - alpha) * plane[mask] + alpha * intensity * band_mix[b]

    hrms = np.clip(hrms, 0.0, 1.0).astype(np.float32)
    pan = apply_spectral_response(hrms, spec)
    lrms = apply_blur_downsample(hrms, spec)
    return hrms, pan, lrms


def normalize(patch: np.ndarray) -> tuple[np.ndarray, float]:
    """Divide by the patch maximum; returns (scaled, divisor).

    The divisor lets fusion outputs be mapped back to input units. An
    all-nonpositive patch has no usable scale and is rejected.
    """
    patch = np.asarray(patch)
    divisor = float(patch.max()) if patch.size else 0.0
    if divisor <= 0.0:
        raise ValueError(f"cannot normalize patch with max {divisor}")
    return (patch / np.asarray(divisor, dtype=patch.dtype)), divisor


def save_dataset(root, splits: dict, spec: DegradationSpec) -> None:
    """Write <root>/spec.json and <split>/<id>_{lrms,pan,gt}.ten files."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "spec.json", "w") as fh:
        json.dump(spec.to_json(), fh, indent=1)
    for split, pairs in splits.items():
        sdir = root / split
        sdir.mkdir(parents=True, exist_ok=True)
        for i, pair in enumerate(pairs):
            stem = f"{i:04d}"
            save_ten(sdir / f"{stem}_lrms.ten", pair.lrms)
            save_ten(sdir / f"{stem}_pan.ten", pair.pan)
            if pair.hrms_gt is not None:
                save_ten(sdir / f"{stem}_gt.ten", pair.hrms_gt)


def load_spec(root) -> DegradationSpec:
    with open(Path(root) / "spec.json") as fh:
        return DegradationSpec.from_json(json.load(fh))


def load_split(root, split: str) -> list:
    """Read one split back as a list of ImagePairs, ordered by id."""
    root = Path(root)
    spec = load_spec(root)
    sdir = root / split
    if not sdir.is_dir():
        raise FileNotFoundError(f"dataset split directory not found: {sdir}")
    pairs = []
    for lpath in sorted(sdir.glob("*_lrms.ten")):
        stem = lpath.name[:-len("_lrms.ten")]
        pan = load_ten(sdir / f"{stem}_pan.ten")
        gt_path = sdir / f"{stem}_gt.ten"
        gt = load_ten(gt_path) if gt_path.exists() else None
        pairs.append(ImagePair(lrms=load_ten(lpath), pan=pan, hrms_gt=gt, spec=spec))
    if not pairs:
        raise FileNotFoundError(f"no samples found under {sdir}")
    return pairs
