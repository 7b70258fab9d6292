"""Acceptance battery: every shipped guarantee, one verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict
lines as they print. The learning checks train the reference model and
its no-prox ablation once each on a 200-scene synthetic dataset and take
roughly half an hour combined on one core; everything else finishes in
seconds. Tolerances are pinned here and nowhere else.
"""

import time

import numpy as np
import pytest

from oracles import (
    ergas_ref,
    ms_step_ref,
    pan_step_ref,
    psnr_ref,
    sam_ref,
    ssim_plane_ref,
)
from pansharp.baselines import BASELINE_METHODS
from pansharp.cli import gradient_check_battery, main
from pansharp.gp_classic import GPConfig, solve
from pansharp.gppnn import (
    NetworkConfig,
    analytic_ms_weights,
    analytic_pan_weights,
    forward,
    init_weights,
    ms_block_forward,
    pan_block_forward,
    predict_pair,
    train,
)
from pansharp.image_ops import resize_hwc
from pansharp.metrics import ergas, psnr, sam, ssim
from pansharp.observation import (
    DegradationSpec,
    ImagePair,
    apply_blur_downsample,
    apply_spectral_response,
    blur_downsample_adjoint,
    normalize,
    spectral_response_adjoint,
    synthesize_scene,
)
from pansharp.tensor import Tensor

TOL_GRAD_OPS = 1e-5
TOL_GRAD_E2E = 1e-4
GRAD_BUDGET_SECONDS = 60.0
TOL_ADJOINT = 1e-10
TOL_UNROLL = 1e-6
TOL_METRICS = 1e-8
SOLVER_MARGIN_DB = 1.0
LEARN_MARGIN_BICUBIC_DB = 2.0
LEARN_MARGIN_IHS_DB = 1.0
LEARN_LOSS_RATIO = 0.5
LEARN_BUDGET_SECONDS = 1800.0


def _verdict(label: str, ok: bool, detail: str) -> None:
    print(f"\n{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    assert ok, f"{label}: {detail}"


# 1/8 gradients ---------------------------------------------------------


def test_gradient_battery():
    t0 = time.perf_counter()
    results = gradient_check_battery(tol_ops=TOL_GRAD_OPS, tol_e2e=TOL_GRAD_E2E)
    elapsed = time.perf_counter() - t0
    worst_op = max(r.max_rel_err for name, r in results
                   if name != "network_end_to_end")
    e2e = dict(results)["network_end_to_end"].max_rel_err
    ok = (all(r.passed for _, r in results) and elapsed < GRAD_BUDGET_SECONDS)
    _verdict(
        "1/8 gradient suite",
        ok,
        f"{len(results)} checks, op max rel err {worst_op:.2e} (tol {TOL_GRAD_OPS:.0e}), "
        f"end-to-end {e2e:.2e} (tol {TOL_GRAD_E2E:.0e}), {elapsed:.1f}s (< 60s)",
    )


# 2/8 adjoint identities -------------------------------------------------


def test_observation_adjoint_identities():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        bands = int(rng.integers(1, 5))
        ratio = int(rng.choice([2, 4]))
        h = int(rng.integers(2, 9)) * ratio
        w = int(rng.integers(2, 9)) * ratio
        size = int(rng.choice([3, 5, 7]))
        spec = DegradationSpec.default(bands=bands, ratio=ratio, blur_size=size,
                                       blur_sigma=float(rng.uniform(0.5, 2.5)))
        u = rng.standard_normal((h, w, bands))
        v = rng.standard_normal((h // ratio, w // ratio, bands))
        lhs = float(np.sum(apply_blur_downsample(u, spec) * v))
        rhs = float(np.sum(u * blur_downsample_adjoint(v, spec, (h, w))))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
        p = rng.standard_normal((h, w, 1))
        lhs = float(np.sum(apply_spectral_response(u, spec) * p))
        rhs = float(np.sum(u * spectral_response_adjoint(p, spec)))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
    _verdict(
        "2/8 adjoint identities",
        worst < TOL_ADJOINT,
        f"blur-downsample and spectral pairings on 20 random instances, "
        f"worst mismatch {worst:.2e} (tol {TOL_ADJOINT:.0e})",
    )


# 3/8 unrolling fidelity --------------------------------------------------


def test_unrolled_blocks_match_straight_line_updates():
    rng = np.random.default_rng(33)
    worst = 0.0
    for _ in range(10):
        bands = int(rng.integers(2, 5))
        width = 2 * bands + int(rng.integers(0, 5))
        r = int(rng.choice([2, 4]))
        hh, ww = 4 * r, 4 * r
        kern = rng.random((3, 3))
        kern /= kern.sum()
        rho = float(rng.uniform(0.1, 0.9))
        h = rng.random((1, bands, hh, ww))
        lrms = rng.random((1, bands, hh // r, ww // r))
        w_ms = analytic_ms_weights(kern, rho, bands=bands, width=width, k=3)
        got = ms_block_forward(Tensor(h), Tensor(lrms), w_ms).data[0]
        ref = ms_step_ref(h[0], lrms[0], kern, rho, r)
        worst = max(worst, float(np.abs(got - ref).max()))

        spectral = rng.random(bands)
        spectral /= spectral.sum()
        pan = rng.random((1, 1, hh, ww))
        w_pan = analytic_pan_weights(spectral, rho, width=width, k=1)
        got = pan_block_forward(Tensor(h), Tensor(pan), w_pan).data[0]
        ref = pan_step_ref(h[0], pan[0, 0], spectral, rho)
        worst = max(worst, float(np.abs(got - ref).max()))
    _verdict(
        "3/8 unrolling fidelity",
        worst < TOL_UNROLL,
        f"analytic-weight blocks vs straight-line refinement steps, 10 random "
        f"instances each, worst abs err {worst:.2e} (tol {TOL_UNROLL:.0e})",
    )


# 4/8 classical solver ----------------------------------------------------


def test_classical_solver_descends_and_beats_bicubic():
    margins = []
    monotone = True
    for seed in (7, 8, 9):
        spec = DegradationSpec.default(bands=4, ratio=4)
        hrms, pan, lrms = synthesize_scene(seed, 64, 64, 4, spec)
        cfg = GPConfig(spec=spec, rho=0.5, iterations=50, prox="nonneg-clip")
        res = solve(lrms, pan, cfg)
        total = np.asarray(res.f_trace) + np.asarray(res.g_trace)
        monotone &= bool(np.all(np.diff(total) <= 1e-12))
        bicubic = np.clip(resize_hwc(lrms, spec.ratio), 0.0, 1.0)
        margins.append(psnr(res.image, hrms) - psnr(bicubic, hrms))
    ok = monotone and all(m >= SOLVER_MARGIN_DB for m in margins)
    _verdict(
        "4/8 classical solver",
        ok,
        f"f+g non-increasing over 50 rounds at rho=0.5: {monotone}; PSNR margins "
        f"over bicubic {['%.2f' % m for m in margins]} dB "
        f"(each >= {SOLVER_MARGIN_DB:.1f})",
    )


# 5/8 metric references ---------------------------------------------------


def test_metrics_match_bruteforce_references():
    rng = np.random.default_rng(55)
    x = rng.random((16, 16, 4))
    y = np.clip(x + 0.05 * rng.standard_normal(x.shape), 0.0, 1.0)
    errs = {
        "psnr": abs(psnr(x, y) - psnr_ref(x, y)),
        "ssim": abs(ssim(x, y) - np.mean([ssim_plane_ref(x[:, :, b], y[:, :, b])
                                          for b in range(4)])),
        "sam": abs(sam(x, y) - sam_ref(x, y)),
        "ergas": abs(ergas(x, y, 4) - ergas_ref(x, y, 4)),
    }
    worst = max(errs.values())
    identities = (psnr(x, x) == float("inf") and ssim(x, x) == 1.0
                  and sam(x, x) == 0.0 and ergas(x, x, 4) == 0.0)
    _verdict(
        "5/8 metric references",
        worst < TOL_METRICS and identities,
        f"16x16 brute-force deltas {({k: f'{v:.1e}' for k, v in errs.items()})} "
        f"(tol {TOL_METRICS:.0e}); self-comparison identities exact: {identities}",
    )


# 6/8 + 7/8 end-to-end learning -------------------------------------------


@pytest.fixture(scope="session")
def learning_dataset():
    spec = DegradationSpec.default(bands=4, ratio=4)

    def split(offset, n):
        pairs = []
        for s in range(n):
            hr, p, lr = synthesize_scene(offset + s, 64, 64, 4, spec)
            pairs.append(ImagePair(lrms=lr, pan=p, hrms_gt=hr, spec=spec))
        return pairs

    return {
        "spec": spec,
        "train": split(0, 200),
        "val": split(10_000, 20),
        "test": split(20_000, 20),
    }


def _trained(dataset, ablation):
    cfg = NetworkConfig(layers=4, width=16, ratio=4, bands=4,
                        ablation=ablation, seed=0)
    t0 = time.perf_counter()
    result = train(dataset["train"], dataset["val"], cfg, epochs=30, lr=5e-4,
                   batch_size=16, seed=0, patch_size=32)
    elapsed = time.perf_counter() - t0
    scores = [psnr(predict_pair(result.weights, pair)[0],
                   normalize(pair.hrms_gt)[0]) for pair in dataset["test"]]
    return result, float(np.mean(scores)), elapsed


@pytest.fixture(scope="session")
def trained_full(learning_dataset):
    return _trained(learning_dataset, "none")


@pytest.fixture(scope="session")
def trained_no_prox(learning_dataset):
    return _trained(learning_dataset, "no_prox")


def _baseline_psnr(dataset, method):
    fn = BASELINE_METHODS[method]
    vals = []
    for pair in dataset["test"]:
        ln, _ = normalize(pair.lrms)
        pn, _ = normalize(pair.pan)
        vals.append(psnr(fn(ln, pn).image, normalize(pair.hrms_gt)[0]))
    return float(np.mean(vals))


def test_end_to_end_learning(learning_dataset, trained_full):
    result, net, elapsed = trained_full
    bicubic = _baseline_psnr(learning_dataset, "bicubic")
    ihs = _baseline_psnr(learning_dataset, "ihs")
    loss_ratio = result.train_loss[-1] / result.train_loss[0]
    ok = (net >= bicubic + LEARN_MARGIN_BICUBIC_DB
          and net >= ihs + LEARN_MARGIN_IHS_DB
          and loss_ratio < LEARN_LOSS_RATIO
          and elapsed < LEARN_BUDGET_SECONDS)
    _verdict(
        "6/8 end-to-end learning",
        ok,
        f"test PSNR {net:.2f} dB vs bicubic {bicubic:.2f} "
        f"(+{net - bicubic:.2f}, need +{LEARN_MARGIN_BICUBIC_DB:.1f}) and ihs {ihs:.2f} "
        f"(+{net - ihs:.2f}, need +{LEARN_MARGIN_IHS_DB:.1f}); final/first loss "
        f"{loss_ratio:.3f} (< {LEARN_LOSS_RATIO}); {elapsed:.0f}s (< 1800s)",
    )


def test_prox_ablation_not_harmful(trained_full, trained_no_prox):
    _, full, _ = trained_full
    _, bare, _ = trained_no_prox
    _verdict(
        "7/8 prox ablation direction",
        full >= bare,
        f"full model {full:.2f} dB vs no-prox {bare:.2f} dB under the same "
        f"budget and seed",
    )


# 8/8 determinism ----------------------------------------------------------


def test_seeded_rerun_is_bit_identical(tmp_path):
    spec = DegradationSpec.default(bands=3, ratio=2, blur_size=5, blur_sigma=1.0)
    pairs = []
    for s in range(6):
        hr, p, lr = synthesize_scene(400 + s, 16, 16, 3, spec)
        pairs.append(ImagePair(lrms=lr, pan=p, hrms_gt=hr, spec=spec))
    cfg = NetworkConfig(layers=2, width=8, ratio=2, bands=3, seed=3)
    runs = [train(pairs[:4], pairs[4:], cfg, epochs=3, lr=5e-4, batch_size=2,
                  seed=3, patch_size=16) for _ in range(2)]
    traces_equal = (runs[0].train_loss == runs[1].train_loss
                    and runs[0].val_psnr == runs[1].val_psnr)

    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--train", "4", "--val", "2",
                 "--test", "1", "--size", "16", "--bands", "3", "--ratio", "2",
                 "--blur-size", "5", "--blur-sigma", "1.0", "--seed", "11"]) == 0
    flags = ["--data", str(data), "--layers", "1", "--width", "6",
             "--epochs", "2", "--patch-size", "16", "--seed", "5"]
    assert main(["train", *flags, "--out", str(tmp_path / "run_a")]) == 0
    assert main(["train", *flags, "--out", str(tmp_path / "run_b")]) == 0
    cli_equal = ((tmp_path / "run_a" / "training_trace.csv").read_bytes()
                 == (tmp_path / "run_b" / "training_trace.csv").read_bytes())
    _verdict(
        "8/8 seeded determinism",
        traces_equal and cli_equal,
        f"library rerun traces bit-identical: {traces_equal}; CLI rerun from the "
        f"recorded configuration bit-identical: {cli_equal}",
    )
