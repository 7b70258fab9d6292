"""Classical gradient-projection solver for the two fidelity terms.

The target cube H is pulled toward both observations by alternating
proximal-gradient steps on

    f(H) = 0.5 * ||lrms - blur_downsample(H)||^2
    g(H) = 0.5 * ||pan  - spectral_response(H)||^2

Each step is written as the literal four-stage split (predict the
observation, form the residual, back-project it scaled by the step size,
apply the prox), which by construction equals prox(H - rho * grad).
Everything here runs on plain (h, w, bands) numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image_ops import resize_hwc
from .observation import (
    DegradationSpec,
    apply_blur_downsample,
    apply_spectral_response,
    blur_downsample_adjoint,
    spectral_response_adjoint,
)
from .tensor import NumericError

__all__ = [
    "GPConfig",
    "SolveResult",
    "grad_f",
    "grad_g",
    "apply_prox",
    "gp_step_ms",
    "gp_step_pan",
    "fused_gp_step",
    "fidelity_ms",
    "fidelity_pan",
    "solve",
]

PROX_KINDS = ("identity", "nonneg-clip")


@dataclass
class GPConfig:
    """Step size, iteration budget, and prox choice of the solver."""

    spec: DegradationSpec
    rho: float = 0.5
    iterations: int = 50
    prox: str = "identity"

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.prox not in PROX_KINDS:
            raise ValueError(f"prox must be one of {PROX_KINDS}, got {self.prox!r}")


def grad_f(h: np.ndarray, lrms: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Gradient of the spatial fidelity: -A^T (lrms - A h)."""
    residual = lrms - apply_blur_downsample(h, spec)
    return -blur_downsample_adjoint(residual, spec, h.shape)


def grad_g(h: np.ndarray, pan: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Gradient of the spectral fidelity: -(pan - S h) outer weights."""
    residual = pan - apply_spectral_response(h, spec)
    return -spectral_response_adjoint(residual, spec)


def apply_prox(h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return h
    if kind == "nonneg-clip":
        return np.maximum(h, 0.0)
    raise ValueError(f"prox must be one of {PROX_KINDS}, got {kind!r}")


def gp_step_ms(h: np.ndarray, lrms: np.ndarray, cfg: GPConfig) -> np.ndarray:
    """One step against the low-resolution observation, as the 4-stage split."""
    predicted = apply_blur_downsample(h, cfg.spec)
    residual_lr = lrms - predicted
    back = cfg.rho * blur_downsample_adjoint(residual_lr, cfg.spec, h.shape)
    return apply_prox(h + back, cfg.prox)


def gp_step_pan(h: np.ndarray, pan: np.ndarray, cfg: GPConfig) -> np.ndarray:
    """One step against the panchromatic observation, as the 4-stage split."""
    predicted = apply_spectral_response(h, cfg.spec)
    residual_p = pan - predicted
    back = cfg.rho * spectral_response_adjoint(residual_p, cfg.spec)
    return apply_prox(h + back, cfg.prox)


def fused_gp_step(h: np.ndarray, lrms: np.ndarray, pan: np.ndarray,
                  cfg: GPConfig) -> np.ndarray:
    """One step on the joint objective: both residuals back-projected,
    summed, one prox."""
    res_lr = lrms - apply_blur_downsample(h, cfg.spec)
    res_p = pan - apply_spectral_response(h, cfg.spec)
    back = cfg.rho * (blur_downsample_adjoint(res_lr, cfg.spec, h.shape)
                      + spectral_response_adjoint(res_p, cfg.spec))
    return apply_prox(h + back, cfg.prox)


def fidelity_ms(h: np.ndarray, lrms: np.ndarray, spec: DegradationSpec) -> float:
    d = lrms - apply_blur_downsample(h, spec)
    return 0.5 * float(np.sum(d.astype(np.float64) ** 2))


def fidelity_pan(h: np.ndarray, pan: np.ndarray, spec: DegradationSpec) -> float:
    d = pan - apply_spectral_response(h, spec)
    return 0.5 * float(np.sum(d.astype(np.float64) ** 2))


@dataclass
class SolveResult:
    """Final estimate plus per-round fidelity traces (index 0 = start)."""

    image: np.ndarray
    f_trace: list = field(default_factory=list)
    g_trace: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.f_trace) - 1


def solve(lrms: np.ndarray, pan: np.ndarray, cfg: GPConfig) -> SolveResult:
    """Alternate MS and PAN steps from a bicubic start.

    One round = one gp_step_ms followed by one gp_step_pan; fidelities
    are recorded after every round. If f+g ever exceeds ten times its
    starting value the solve aborts: the step size is too large.
    """
    spec = cfg.spec
    h = resize_hwc(lrms.astype(np.float64), spec.ratio)
    f0 = fidelity_ms(h, lrms, spec)
    g0 = fidelity_pan(h, pan, spec)
    result = SolveResult(image=h, f_trace=[f0], g_trace=[g0])
    guard = 10.0 * (f0 + g0)
    for it in range(cfg.iterations):
        h = gp_step_ms(h, lrms, cfg)
        h = gp_step_pan(h, pan, cfg)
        f = fidelity_ms(h, lrms, spec)
        g = fidelity_pan(h, pan, spec)
        result.f_trace.append(f)
        result.g_trace.append(g)
        if not np.isfinite(f + g) or (f + g > guard and guard > 0):
            raise NumericError(
                f"solver diverged at round {it + 1}: f+g = {f + g:.3e} vs "
                f"initial {f0 + g0:.3e}; reduce rho (currently {cfg.rho})"
            )
    result.image = h
    return result
