"""Differentiable image operators: 2-D convolution, ReLU, cascaded conv
units, and bicubic resampling.

All operators take and return tensors in (batch, channels, height, width)
layout. Convolution is cross-correlation with stride 1 and zero padding of
(k - 1) / 2, so spatial size is preserved. Bicubic resampling uses the
Keys kernel (a = -0.5) with half-pixel coordinate mapping and edge
clamping; it is built as one weight matrix per axis, which makes the
backward pass the exact transpose of the forward map.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .tensor import Tensor, _record, _accum

__all__ = [
    "ConvKernel",
    "conv2d",
    "relu",
    "conv_block",
    "transpose_kernel",
    "bicubic_resize",
    "resize_plane",
    "resize_hwc",
]


@dataclass
class ConvKernel:
    """Weights (out_ch, in_ch, k, k) and bias (out_ch,) of one conv layer."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ValueError(f"ConvKernel: weight must be 4-D, got shape {self.weight.shape}")
        co, ci, kh, kw = self.weight.shape
        if kh != kw:
            raise ValueError(f"ConvKernel: kernel must be square, got {kh}x{kw}")
        if kh % 2 == 0:
            raise ValueError(f"ConvKernel: kernel size must be odd, got {kh}")
        if self.bias.shape != (co,):
            raise ValueError(
                f"ConvKernel: bias shape {self.bias.shape} does not match {co} output channels"
            )

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def ksize(self) -> int:
        return self.weight.shape[2]

    def params(self):
        return [self.weight, self.bias]

    @classmethod
    def from_arrays(cls, weight, bias, requires_grad: bool = False) -> "ConvKernel":
        return cls(Tensor(weight, requires_grad=requires_grad),
                   Tensor(bias, requires_grad=requires_grad))


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patch matrix of shape (b*h*w, ci*kh*kw) under same zero padding."""
    b, c, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * h * w, c * kh * kw)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    bs, ci, h, wd = x.shape
    co = w.shape[0]
    cols = _im2col(x, w.shape[2], w.shape[3])
    out = cols @ w.reshape(co, -1).T
    if b is not None:
        out += b
    out = out.reshape(bs, h, wd, co).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d(x: Tensor, k: ConvKernel) -> Tensor:
    """Stride-1 cross-correlation with same zero padding, plus bias.

    Gradient w.r.t. the input is computed by running the same correlation
    with the channel-swapped, 180-degree rotated kernel, which is the
    exact adjoint for this padding scheme.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be (b, c, h, w), got shape {x.shape}")
    if x.shape[1] != k.in_channels:
        raise ValueError(
            f"conv2d: input has {x.shape[1]} channels, kernel expects {k.in_channels}"
        )
    if x.dtype != k.weight.dtype:
        raise ValueError(f"conv2d: dtype mismatch {x.dtype} vs {k.weight.dtype}")
    out_data, cols = _conv_forward(x.data, k.weight.data, k.bias.data)
    out = Tensor(out_data)
    co = k.out_channels

    def _bwd(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, co)
        _accum(k.weight, (gmat.T @ cols).reshape(k.weight.shape))
        _accum(k.bias, gmat.sum(axis=0))
        w_adj = k.weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        gx, _ = _conv_forward(np.ascontiguousarray(g), np.ascontiguousarray(w_adj), None)
        _accum(x, gx)

    return _record(out, (x, k.weight, k.bias), _bwd)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the gradient at exactly 0 is 0."""
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0

    def _bwd(g):
        _accum(x, g * mask)

    return _record(out, (x,), _bwd)


def conv_block(x: Tensor, k1: ConvKernel, k2: ConvKernel) -> Tensor:
    """Cascaded conv unit: conv2d -> ReLU -> conv2d."""
    if k1.out_channels != k2.in_channels:
        raise ValueError(
            f"conv_block: cascade mismatch, first emits {k1.out_channels} channels, "
            f"second expects {k2.in_channels}"
        )
    return conv2d(relu(conv2d(x, k1)), k2)


def transpose_kernel(w: Tensor) -> Tensor:
    """Swap in/out channel axes and rotate the taps 180 degrees.

    Maps a (co, ci, k, k) kernel to the (ci, co, k, k) kernel of the
    adjoint correlation. The transform is an involution, so its backward
    rule is itself.
    """
    if w.ndim != 4:
        raise ValueError(f"transpose_kernel: want 4-D kernel, got shape {w.shape}")
    out = Tensor(np.ascontiguousarray(w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]))

    def _bwd(g):
        _accum(w, np.ascontiguousarray(g.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]))

    return _record(out, (w,), _bwd)


def _cubic(d: np.ndarray) -> np.ndarray:
    """Keys cubic-convolution kernel with a = -0.5."""
    ad = np.abs(d)
    near = (1.5 * ad - 2.5) * ad * ad + 1.0
    far = ((-0.5 * ad + 2.5) * ad - 4.0) * ad + 2.0
    return np.where(ad <= 1.0, near, np.where(ad < 2.0, far, 0.0))


def _as_scale(scale) -> Fraction:
    """Normalize a resize factor to r/1 (upsample) or 1/r (downsample)."""
    if isinstance(scale, Fraction):
        frac = scale
    elif isinstance(scale, int):
        frac = Fraction(scale, 1)
    else:
        s = float(scale)
        if s > 0 and abs(s - round(s)) < 1e-9:
            frac = Fraction(int(round(s)), 1)
        elif s > 0 and abs(1.0 / s - round(1.0 / s)) < 1e-9:
            frac = Fraction(1, int(round(1.0 / s)))
        else:
            raise ValueError(f"resize scale must be an integer r or 1/r, got {scale!r}")
    if frac <= 0:
        raise ValueError(f"resize scale must be positive, got {scale!r}")
    if frac.numerator != 1 and frac.denominator != 1:
        raise ValueError(f"resize scale must be an integer r or 1/r, got {scale!r}")
    return frac


@lru_cache(maxsize=256)
def _axis_matrix(n_in: int, num: int, den: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic resampling matrix for one axis.

    Output coordinate i samples the source at (i + 0.5) / scale - 0.5;
    the four taps around it are clamped to the valid range, so boundary
    rows still sum to one.
    """
    if den > 1 and n_in % den != 0:
        raise ValueError(f"cannot downsample axis of size {n_in} by {den}: not divisible")
    n_out = n_in * num // den
    scale = num / den
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        s = (i + 0.5) / scale - 0.5
        j0 = int(np.floor(s))
        for j in range(j0 - 1, j0 + 3):
            w = float(_cubic(np.asarray(s - j)))
            mat[i, min(max(j, 0), n_in - 1)] += w
    return mat


def _resize_pair(h: int, w: int, scale) -> tuple[np.ndarray, np.ndarray]:
    frac = _as_scale(scale)
    return (_axis_matrix(h, frac.numerator, frac.denominator),
            _axis_matrix(w, frac.numerator, frac.denominator))


def bicubic_resize(x: Tensor, scale) -> Tensor:
    """Bicubic resample of a (b, c, h, w) tensor by r or 1/r per axis.

    The operation is linear: forward is Wy @ x @ Wx^T applied per image
    plane, backward is the transposed matrices, so the adjoint property
    holds to machine precision.
    """
    if x.ndim != 4:
        raise ValueError(f"bicubic_resize: input must be (b, c, h, w), got shape {x.shape}")
    wy, wx = _resize_pair(x.shape[2], x.shape[3], scale)
    wy = wy.astype(x.dtype)
    wx = wx.astype(x.dtype)
    out = Tensor(np.matmul(np.matmul(wy, x.data), wx.T))

    def _bwd(g):
        _accum(x, np.matmul(np.matmul(wy.T, g), wx))

    return _record(out, (x,), _bwd)


def resize_plane(plane: np.ndarray, scale) -> np.ndarray:
    """Bicubic resample of a single (h, w) numpy plane."""
    if plane.ndim != 2:
        raise ValueError(f"resize_plane: want (h, w), got shape {plane.shape}")
    wy, wx = _resize_pair(plane.shape[0], plane.shape[1], scale)
    return (wy @ plane.astype(np.float64) @ wx.T).astype(plane.dtype)


def resize_hwc(img: np.ndarray, scale) -> np.ndarray:
    """Bicubic resample of an (h, w, bands) numpy image."""
    if img.ndim != 3:
        raise ValueError(f"resize_hwc: want (h, w, bands), got shape {img.shape}")
    wy, wx = _resize_pair(img.shape[0], img.shape[1], scale)
    tmp = np.tensordot(wy, img.astype(np.float64), axes=(1, 0))
    out = np.tensordot(tmp, wx, axes=(1, 1)).transpose(0, 2, 1)
    return out.astype(img.dtype)
