"""Unrolled gradient-projection fusion network.

The network alternates two learned refinement blocks for a fixed number
of layers, starting from the bicubic upsample of the low-res cube. Each
block mirrors one classical step: predict the observation with a
cascaded conv unit, form the residual against the real observation,
back-project it through a second cascade scaled by a learned step size,
and pass the sum through a learned prox cascade.

MS block  (cube observation, ratio r):
    lhat = bicubic_down(cascade(h))           predict the low-res cube
    r_l  = lrms - lhat
    r_h  = rho * bicubic_up(cascade(r_l))     back-project the residual
    out  = prox_cascade(h + r_h)

PAN block (spectral observation, 1x1 cascades):
    phat = cascade_1x1(h)
    r_p  = pan - phat
    r_h  = rho * cascade_1x1(r_p)
    out  = prox_cascade(h + r_h)

Ablations: "no_prox" drops the prox cascades, "shared_weights" reuses
one block pair for every layer, "fused_block" computes both residual
branches from the same state and applies a single shared prox per layer,
and "transposed_kernels" ties each back-projection kernel to its
prediction kernel (in/out swap + 180-degree rotation) instead of
learning it freely.

The module also provides analytic weight constructors that configure a
block to compute an exact classical step; the verification suite uses
them to check the unrolling against straight-line reference formulas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_ops import ConvKernel, bicubic_resize, conv_block, transpose_kernel
from .metrics import psnr
from .observation import normalize
from .tensor import (
    AdamState,
    Tensor,
    adam_step,
    add,
    l1_loss,
    scalar_mul,
    sub,
    zero_grads,
    load_ten,
    save_ten,
)

__all__ = [
    "ABLATIONS",
    "NetworkConfig",
    "Cascade",
    "MSBlockWeights",
    "PANBlockWeights",
    "FusedBlockWeights",
    "NetworkWeights",
    "init_weights",
    "ms_block_forward",
    "pan_block_forward",
    "fused_block_forward",
    "forward",
    "parameter_count",
    "TrainResult",
    "train",
    "predict_pair",
    "save_weights",
    "load_weights",
    "analytic_filter_cascade",
    "analytic_identity_cascade",
    "analytic_ms_weights",
    "analytic_pan_weights",
    "hwc_to_batch",
    "batch_to_hwc",
]

ABLATIONS = ("none", "no_prox", "shared_weights", "fused_block", "transposed_kernels")


@dataclass
class NetworkConfig:
    """Architecture hyperparameters.

    layers: number of unrolled refinement layers (MS + PAN pair each).
    width:  hidden channel count of every cascade.
    k_lr:   spatial kernel size of cube-domain cascades (odd).
    k_pan:  kernel size of the spectral cascades; must stay 1 because the
            spectral observation mixes bands pointwise.
    """

    layers: int = 8
    width: int = 64
    k_lr: int = 3
    k_pan: int = 1
    ratio: int = 4
    bands: int = 4
    ablation: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.k_lr % 2 == 0 or self.k_lr < 1:
            raise ValueError(f"k_lr must be odd and positive, got {self.k_lr}")
        if self.k_pan != 1:
            raise ValueError(f"k_pan must be 1, got {self.k_pan}")
        if self.ratio < 2:
            raise ValueError(f"ratio must be >= 2, got {self.ratio}")
        if self.bands < 1:
            raise ValueError(f"bands must be >= 1, got {self.bands}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in
                ("layers", "width", "k_lr", "k_pan", "ratio", "bands", "ablation", "seed")}

    @classmethod
    def from_json(cls, doc: dict) -> "NetworkConfig":
        return cls(**{k: doc[k] for k in
                      ("layers", "width", "k_lr", "k_pan", "ratio", "bands", "ablation", "seed")})


@dataclass
class Cascade:
    """Kernel pair of one cascaded conv unit."""

    first: ConvKernel
    second: ConvKernel

    def __post_init__(self):
        if self.first.out_channels != self.second.in_channels:
            raise ValueError(
                f"cascade mismatch: first emits {self.first.out_channels}, "
                f"second expects {self.second.in_channels}"
            )

    def named_params(self, prefix: str) -> dict:
        return {
            f"{prefix}1_weight": self.first.weight,
            f"{prefix}1_bias": self.first.bias,
            f"{prefix}2_weight": self.second.weight,
            f"{prefix}2_bias": self.second.bias,
        }


@dataclass
class MSBlockWeights:
    """Parameters of one cube-domain refinement block.

    When the back-projection kernels are tied (transposed_kernels), ``up``
    is None and only the two bias vectors stay free; the effective up
    kernels are recomputed from ``down`` inside the forward pass so the
    tie also holds for gradients.
    """

    down: Cascade
    up: Cascade | None
    up_bias1: Tensor | None
    up_bias2: Tensor | None
    prox: Cascade | None
    rho: Tensor

    def up_kernels(self) -> tuple[ConvKernel, ConvKernel]:
        if self.up is not None:
            return self.up.first, self.up.second
        k1 = ConvKernel(transpose_kernel(self.down.second.weight), self.up_bias1)
        k2 = ConvKernel(transpose_kernel(self.down.first.weight), self.up_bias2)
        return k1, k2

    def named_params(self, prefix: str) -> dict:
        out = dict(self.down.named_params(f"{prefix}_down"))
        if self.up is not None:
            out.update(self.up.named_params(f"{prefix}_up"))
        else:
            out[f"{prefix}_up1_bias"] = self.up_bias1
            out[f"{prefix}_up2_bias"] = self.up_bias2
        if self.prox is not None:
            out.update(self.prox.named_params(f"{prefix}_prox"))
        out[f"{prefix}_rho"] = self.rho
        return out


@dataclass
class PANBlockWeights:
    """Parameters of one spectral refinement block (1x1 cascades)."""

    reduce: Cascade
    expand: Cascade | None
    expand_bias1: Tensor | None
    expand_bias2: Tensor | None
    prox: Cascade | None
    rho: Tensor

    def expand_kernels(self) -> tuple[ConvKernel, ConvKernel]:
        if self.expand is not None:
            return self.expand.first, self.expand.second
        k1 = ConvKernel(transpose_kernel(self.reduce.second.weight), self.expand_bias1)
        k2 = ConvKernel(transpose_kernel(self.reduce.first.weight), self.expand_bias2)
        return k1, k2

    def named_params(self, prefix: str) -> dict:
        out = dict(self.reduce.named_params(f"{prefix}_reduce"))
        if self.expand is not None:
            out.update(self.expand.named_params(f"{prefix}_expand"))
        else:
            out[f"{prefix}_expand1_bias"] = self.expand_bias1
            out[f"{prefix}_expand2_bias"] = self.expand_bias2
        if self.prox is not None:
            out.update(self.prox.named_params(f"{prefix}_prox"))
        out[f"{prefix}_rho"] = self.rho
        return out


@dataclass
class FusedBlockWeights:
    """Single-block layer: both residual branches, one prox, one rho."""

    down: Cascade
    up: Cascade
    reduce: Cascade
    expand: Cascade
    prox: Cascade
    rho: Tensor

    def named_params(self, prefix: str) -> dict:
        out = dict(self.down.named_params(f"{prefix}_down"))
        out.update(self.up.named_params(f"{prefix}_up"))
        out.update(self.reduce.named_params(f"{prefix}_reduce"))
        out.update(self.expand.named_params(f"{prefix}_expand"))
        out.update(self.prox.named_params(f"{prefix}_prox"))
        out[f"{prefix}_rho"] = self.rho
        return out


@dataclass
class NetworkWeights:
    """All learnable tensors of one network, with stable names."""

    config: NetworkConfig
    ms_blocks: list = field(default_factory=list)
    pan_blocks: list = field(default_factory=list)
    fused_blocks: list = field(default_factory=list)

    def named_params(self) -> dict:
        out: dict = {}
        for i, blk in enumerate(self.fused_blocks):
            out.update(blk.named_params(f"layer{i:02d}_fused"))
        for i, (ms, pan) in enumerate(zip(self.ms_blocks, self.pan_blocks)):
            out.update(ms.named_params(f"layer{i:02d}_ms"))
            out.update(pan.named_params(f"layer{i:02d}_pan"))
        return out

    def params(self) -> list:
        return list(self.named_params().values())


def _init_conv(rng, co, ci, k, dtype) -> ConvKernel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    lim = 1.0 / np.sqrt(ci * k * k)
    w = rng.uniform(-lim, lim, size=(co, ci, k, k)).astype(dtype)
    return ConvKernel(Tensor(w, requires_grad=True),
                      Tensor(np.zeros(co, dtype=dtype), requires_grad=True))


def _init_cascade(rng, c_in, c_mid, c_out, k, dtype) -> Cascade:
    return Cascade(_init_conv(rng, c_mid, c_in, k, dtype),
                   _init_conv(rng, c_out, c_mid, k, dtype))


def _zero_bias(n, dtype) -> Tensor:
    return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


def _rho(dtype) -> Tensor:
    return Tensor(np.full(1, 0.1, dtype=dtype), requires_grad=True)


def init_weights(cfg: NetworkConfig, seed: int | None = None,
                 dtype=np.float32) -> NetworkWeights:
    """Seeded initialization; identical seeds give identical tensors."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    b, c, k = cfg.bands, cfg.width, cfg.k_lr
    tied = cfg.ablation == "transposed_kernels"
    with_prox = cfg.ablation != "no_prox"
    n_blocks = 1 if cfg.ablation == "shared_weights" else cfg.layers
    weights = NetworkWeights(config=cfg)

    if cfg.ablation == "fused_block":
        for _ in range(n_blocks):
            weights.fused_blocks.append(FusedBlockWeights(
                down=_init_cascade(rng, b, c, b, k, dtype),
                up=_init_cascade(rng, b, c, b, k, dtype),
                reduce=_init_cascade(rng, b, c, 1, 1, dtype),
                expand=_init_cascade(rng, 1, c, b, 1, dtype),
                prox=_init_cascade(rng, b, c, b, k, dtype),
                rho=_rho(dtype),
            ))
        return weights

    for _ in range(n_blocks):
        down = _init_cascade(rng, b, c, b, k, dtype)
        ms = MSBlockWeights(
            down=down,
            up=None if tied else _init_cascade(rng, b, c, b, k, dtype),
            up_bias1=_zero_bias(c, dtype) if tied else None,
            up_bias2=_zero_bias(b, dtype) if tied else None,
            prox=_init_cascade(rng, b, c, b, k, dtype) if with_prox else None,
            rho=_rho(dtype),
        )
        reduce = _init_cascade(rng, b, c, 1, 1, dtype)
        pan = PANBlockWeights(
            reduce=reduce,
            expand=None if tied else _init_cascade(rng, 1, c, b, 1, dtype),
            expand_bias1=_zero_bias(c, dtype) if tied else None,
            expand_bias2=_zero_bias(b, dtype) if tied else None,
            prox=_init_cascade(rng, b, c, b, k, dtype) if with_prox else None,
            rho=_rho(dtype),
        )
        weights.ms_blocks.append(ms)
        weights.pan_blocks.append(pan)
    return weights


def _spatial_ratio(h: Tensor, lrms: Tensor) -> int:
    hb, hc, hh, hw = h.shape
    lb, lc, lh, lw = lrms.shape
    if hb != lb or hc != lc:
        raise ValueError(f"state {h.shape} and lrms {lrms.shape} disagree in batch/bands")
    if lh == 0 or hh % lh or hw % lw or hh // lh != hw // lw:
        raise ValueError(f"state {h.shape} is not an integer multiple of lrms {lrms.shape}")
    r = hh // lh
    if r < 2:
        raise ValueError(f"ratio between state and lrms must be >= 2, got {r}")
    return r


def ms_block_forward(h: Tensor, lrms: Tensor, w: MSBlockWeights) -> Tensor:
    """Refine the state against the low-res cube observation."""
    r = _spatial_ratio(h, lrms)
    lhat = bicubic_resize(conv_block(h, w.down.first, w.down.second), 1.0 / r)
    r_l = sub(lrms, lhat)
    up1, up2 = w.up_kernels()
    r_h = scalar_mul(w.rho, bicubic_resize(conv_block(r_l, up1, up2), r))
    out = add(h, r_h)
    if w.prox is not None:
        out = conv_block(out, w.prox.first, w.prox.second)
    return out


def pan_block_forward(h: Tensor, pan: Tensor, w: PANBlockWeights) -> Tensor:
    """Refine the state against the panchromatic observation."""
    if pan.shape[1] != 1:
        raise ValueError(f"pan must have one channel, got shape {pan.shape}")
    if h.shape[0] != pan.shape[0] or h.shape[2:] != pan.shape[2:]:
        raise ValueError(f"state {h.shape} and pan {pan.shape} must share batch and size")
    phat = conv_block(h, w.reduce.first, w.reduce.second)
    r_p = sub(pan, phat)
    ex1, ex2 = w.expand_kernels()
    r_h = scalar_mul(w.rho, conv_block(r_p, ex1, ex2))
    out = add(h, r_h)
    if w.prox is not None:
        out = conv_block(out, w.prox.first, w.prox.second)
    return out


def fused_block_forward(h: Tensor, lrms: Tensor, pan: Tensor,
                        w: FusedBlockWeights) -> Tensor:
    """Both residual branches from the same state, summed, one prox."""
    r = _spatial_ratio(h, lrms)
    lhat = bicubic_resize(conv_block(h, w.down.first, w.down.second), 1.0 / r)
    ms_branch = bicubic_resize(conv_block(sub(lrms, lhat), w.up.first, w.up.second), r)
    phat = conv_block(h, w.reduce.first, w.reduce.second)
    pan_branch = conv_block(sub(pan, phat), w.expand.first, w.expand.second)
    out = add(h, scalar_mul(w.rho, add(ms_branch, pan_branch)))
    return conv_block(out, w.prox.first, w.prox.second)


def forward(lrms: Tensor, pan: Tensor, weights: NetworkWeights) -> Tensor:
    """Bicubic start, then the unrolled refinement layers."""
    cfg = weights.config
    if lrms.ndim != 4 or pan.ndim != 4:
        raise ValueError(
            f"forward expects (batch, ch, h, w) tensors, got {lrms.shape} and {pan.shape}"
        )
    if lrms.shape[1] != cfg.bands:
        raise ValueError(f"lrms has {lrms.shape[1]} bands, config says {cfg.bands}")
    if pan.shape[2] != lrms.shape[2] * cfg.ratio or pan.shape[3] != lrms.shape[3] * cfg.ratio:
        raise ValueError(
            f"pan {pan.shape} is not ratio {cfg.ratio} times lrms {lrms.shape}"
        )
    h = bicubic_resize(lrms, cfg.ratio)
    shared = cfg.ablation == "shared_weights"
    for t in range(cfg.layers):
        i = 0 if shared else t
        if cfg.ablation == "fused_block":
            h = fused_block_forward(h, lrms, pan, weights.fused_blocks[i])
        else:
            h = ms_block_forward(h, lrms, weights.ms_blocks[i])
            h = pan_block_forward(h, pan, weights.pan_blocks[i])
    return h


def parameter_count(weights: NetworkWeights) -> int:
    return sum(p.size for p in weights.params())


# Analytic configurations: cascades that compute exact linear maps.
# Signed inputs survive the inner ReLU through a sign-split lift: each
# band occupies a (+x, -x) channel pair recombined with (+w, -w), since
# relu(x) - relu(-x) == x for every sign.


def _centered(kern: np.ndarray, k: int) -> np.ndarray:
    kk = kern.shape[0]
    if kk > k or kk % 2 == 0:
        raise ValueError(f"cannot embed {kk}x{kk} taps into a {k}x{k} kernel")
    out = np.zeros((k, k), dtype=np.float64)
    o = (k - kk) // 2
    out[o:o + kk, o:o + kk] = kern
    return out


def analytic_filter_cascade(kern: np.ndarray, bands: int, width: int, k: int,
                            filter_position: str = "first",
                            dtype=np.float64) -> Cascade:
    """Cascade computing per-band zero-padding correlation with ``kern``.

    filter_position "first" puts the taps in the lift conv and an
    identity in the projection; "second" lifts with identities and
    filters in the projection. Needs width >= 2*bands.
    """
    if width < 2 * bands:
        raise ValueError(f"analytic cascade needs width >= {2 * bands}, got {width}")
    if filter_position not in ("first", "second"):
        raise ValueError(f"filter_position must be 'first' or 'second', got {filter_position!r}")
    taps = _centered(np.asarray(kern, dtype=np.float64), k)
    delta = _centered(np.ones((1, 1)), k)
    w1 = np.zeros((width, bands, k, k))
    w2 = np.zeros((bands, width, k, k))
    lift = taps if filter_position == "first" else delta
    proj = delta if filter_position == "first" else taps
    for b in range(bands):
        w1[2 * b, b] = lift
        w1[2 * b + 1, b] = -lift
        w2[b, 2 * b] = proj
        w2[b, 2 * b + 1] = -proj
    return Cascade(
        ConvKernel.from_arrays(w1.astype(dtype), np.zeros(width, dtype=dtype)),
        ConvKernel.from_arrays(w2.astype(dtype), np.zeros(bands, dtype=dtype)),
    )


def analytic_identity_cascade(bands: int, width: int, k: int,
                              dtype=np.float64) -> Cascade:
    """Cascade that reproduces its input exactly, whatever the sign."""
    return analytic_filter_cascade(np.ones((1, 1)), bands, width, k,
                                   filter_position="first", dtype=dtype)


def analytic_ms_weights(kern: np.ndarray, rho: float, bands: int, width: int,
                        k: int, with_prox: bool = True,
                        dtype=np.float64) -> MSBlockWeights:
    """MS block equal to the classical step with blur taps ``kern``."""
    kern = np.asarray(kern, dtype=np.float64)
    return MSBlockWeights(
        down=analytic_filter_cascade(kern, bands, width, k, "first", dtype),
        up=analytic_filter_cascade(kern[::-1, ::-1], bands, width, k, "second", dtype),
        up_bias1=None,
        up_bias2=None,
        prox=analytic_identity_cascade(bands, width, k, dtype) if with_prox else None,
        rho=Tensor(np.full(1, rho, dtype=dtype)),
    )


def analytic_pan_weights(spectral: np.ndarray, rho: float, width: int,
                         k: int, with_prox: bool = True,
                         dtype=np.float64) -> PANBlockWeights:
    """PAN block equal to the classical step with the given band weights."""
    s = np.asarray(spectral, dtype=np.float64)
    bands = s.shape[0]
    if width < max(2 * bands, 2):
        raise ValueError(f"analytic pan block needs width >= {max(2 * bands, 2)}")
    r1 = np.zeros((width, bands, 1, 1))
    r2 = np.zeros((1, width, 1, 1))
    for b in range(bands):
        r1[2 * b, b, 0, 0] = s[b]
        r1[2 * b + 1, b, 0, 0] = -s[b]
        r2[0, 2 * b, 0, 0] = 1.0
        r2[0, 2 * b + 1, 0, 0] = -1.0
    e1 = np.zeros((width, 1, 1, 1))
    e2 = np.zeros((bands, width, 1, 1))
    e1[0, 0, 0, 0] = 1.0
    e1[1, 0, 0, 0] = -1.0
    for b in range(bands):
        e2[b, 0, 0, 0] = s[b]
        e2[b, 1, 0, 0] = -s[b]
    mk = lambda w: ConvKernel.from_arrays(w.astype(dtype), np.zeros(w.shape[0], dtype=dtype))
    return PANBlockWeights(
        reduce=Cascade(mk(r1), mk(r2)),
        expand=Cascade(mk(e1), mk(e2)),
        expand_bias1=None,
        expand_bias2=None,
        prox=analytic_identity_cascade(bands, width, k, dtype) if with_prox else None,
        rho=Tensor(np.full(1, rho, dtype=dtype)),
    )


# Training.


def hwc_to_batch(*imgs: np.ndarray) -> np.ndarray:
    """Stack (h, w, c) images into a float32 (n, c, h, w) batch."""
    return np.stack([np.asarray(im).transpose(2, 0, 1) for im in imgs]).astype(np.float32)


def batch_to_hwc(batch: np.ndarray, index: int = 0) -> np.ndarray:
    return np.asarray(batch)[index].transpose(1, 2, 0)


def _normalized_triplet(lrms, pan, gt):
    ln, ld = normalize(lrms)
    pn, _ = normalize(pan)
    gn, _ = normalize(gt)
    return ln, pn, gn, ld


def make_training_patches(pairs, patch_size: int, ratio: int,
                          stride: int | None = None) -> list:
    """Overlapping crops from per-scene normalized modalities.

    Each scene is normalized once per modality, then cropped on a stride
    grid so training sees the same value scale the fusion path uses at
    inference. patch_size and stride are on the ground-truth grid and must
    be divisible by the ratio so every crop stays aligned with the low-res
    sample positions; stride defaults to half the patch. Scenes smaller
    than the patch are used whole.
    """
    if patch_size % ratio:
        raise ValueError(f"patch size {patch_size} not divisible by ratio {ratio}")
    if stride is None:
        stride = max(patch_size // 2, ratio)
    if stride < 1 or stride % ratio:
        raise ValueError(f"stride {stride} not a positive multiple of ratio {ratio}")
    patches = []
    for pair in pairs:
        if pair.hrms_gt is None:
            raise ValueError("training requires ground truth on every pair")
        lrms, pan, gt, _ = _normalized_triplet(pair.lrms, pair.pan, pair.hrms_gt)
        h, w = gt.shape[:2]
        ph = min(patch_size, h)
        pw = min(patch_size, w)
        for y0 in range(0, h - ph + 1, stride):
            for x0 in range(0, w - pw + 1, stride):
                gp = gt[y0:y0 + ph, x0:x0 + pw]
                pp = pan[y0:y0 + ph, x0:x0 + pw]
                lp = lrms[y0 // ratio:(y0 + ph) // ratio, x0 // ratio:(x0 + pw) // ratio]
                if lp.max() <= 0 or pp.max() <= 0 or gp.max() <= 0:
                    continue  # blank tile carries no usable scale
                patches.append((lp.transpose(2, 0, 1).astype(np.float32),
                                pp.transpose(2, 0, 1).astype(np.float32),
                                gp.transpose(2, 0, 1).astype(np.float32)))
    if not patches:
        raise ValueError("no usable training patches")
    return patches


@dataclass
class TrainResult:
    """Best-validation weights plus per-epoch traces."""

    weights: NetworkWeights
    train_loss: list
    val_psnr: list
    best_epoch: int
    best_val_psnr: float


def predict_pair(weights: NetworkWeights, pair) -> tuple[np.ndarray, float]:
    """Fuse one sample with normalized inputs.

    Returns the prediction clipped to [0, 1] in normalized units together
    with the lrms divisor, which maps the output back to input units.
    """
    ln, ld = normalize(pair.lrms)
    pn, _ = normalize(pair.pan)
    lrms_t = Tensor(hwc_to_batch(ln))
    pan_t = Tensor(hwc_to_batch(pn))
    out = forward(lrms_t, pan_t, weights)
    return np.clip(batch_to_hwc(out.data), 0.0, 1.0).astype(np.float32), ld


def _val_psnr(weights: NetworkWeights, val_pairs) -> float:
    scores = []
    for pair in val_pairs:
        pred, _ = predict_pair(weights, pair)
        gn, _ = normalize(pair.hrms_gt)
        scores.append(psnr(pred, gn))
    finite = [s for s in scores if np.isfinite(s)]
    return float(np.mean(finite)) if finite else float("inf")


def train(train_pairs, val_pairs, cfg: NetworkConfig, epochs: int = 100,
          lr: float = 5e-4, batch_size: int = 16, seed: int | None = None,
          patch_size: int = 32, stride: int | None = None) -> TrainResult:
    """Adam on mean-l1 over normalized patches; keeps best-val weights.

    Deterministic for a fixed seed: initialization, shuffling, and every
    update run in a fixed order with no other entropy sources. A NaN/Inf
    loss aborts with a NumericError naming the epoch and batch.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    seed = cfg.seed if seed is None else seed
    weights = init_weights(cfg, seed=seed)
    params = weights.params()
    state = AdamState.for_params(params, lr=lr)
    patches = make_training_patches(train_pairs, patch_size, cfg.ratio, stride=stride)
    shuffle_rng = np.random.default_rng(seed + 1)

    loss_trace: list = []
    psnr_trace: list = []
    best_epoch = -1
    best_val = -float("inf")
    best_data = [p.data.copy() for p in params]

    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(patches))
        batch_losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            lrms_b = Tensor(np.stack([patches[i][0] for i in idx]))
            pan_b = Tensor(np.stack([patches[i][1] for i in idx]))
            gt_b = Tensor(np.stack([patches[i][2] for i in idx]))
            loss = l1_loss(forward(lrms_b, pan_b, weights), gt_b)
            loss.check_finite(f"training loss (epoch {epoch}, batch {start // batch_size})")
            zero_grads(params)
            loss.backward()
            adam_step(params, [p.grad for p in params], state)
            batch_losses.append(float(loss.data))
        loss_trace.append(float(np.mean(batch_losses)))
        score = _val_psnr(weights, val_pairs) if val_pairs else -loss_trace[-1]
        psnr_trace.append(score)
        if score > best_val:
            best_val = score
            best_epoch = epoch
            best_data = [p.data.copy() for p in params]

    for p, d in zip(params, best_data):
        p.data[...] = d
    return TrainResult(weights=weights, train_loss=loss_trace, val_psnr=psnr_trace,
                       best_epoch=best_epoch, best_val_psnr=best_val)


# Checkpoints: one .ten per named parameter plus config.json.


def save_weights(ckpt_dir, weights: NetworkWeights) -> None:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    with open(ckpt_dir / "config.json", "w") as fh:
        json.dump(weights.config.to_json(), fh, indent=1)
    for name, tensor in weights.named_params().items():
        save_ten(ckpt_dir / f"{name}.ten", tensor.data)


def load_weights(ckpt_dir) -> NetworkWeights:
    ckpt_dir = Path(ckpt_dir)
    with open(ckpt_dir / "config.json") as fh:
        cfg = NetworkConfig.from_json(json.load(fh))
    weights = init_weights(cfg)
    for name, tensor in weights.named_params().items():
        path = ckpt_dir / f"{name}.ten"
        if not path.exists():
            raise FileNotFoundError(f"checkpoint misses parameter file {path}")
        arr = load_ten(path)
        if arr.shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint {name}: shape {arr.shape} does not match {tensor.data.shape}"
            )
        tensor.data[...] = arr.astype(tensor.data.dtype)
    return weights
