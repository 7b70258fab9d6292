"""CLI wiring: every subcommand exercised in-process on a tiny dataset."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from pansharp.cli import main
from pansharp.tensor import load_ten


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "tiny"
    rc = main(["synth", "--out", str(root), "--train", "2", "--val", "1",
               "--test", "2", "--size", "16", "--bands", "3", "--ratio", "2",
               "--blur-size", "5", "--blur-sigma", "1.0", "--seed", "7"])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("runs") / "ckpt"
    rc = main(["train", "--data", str(dataset), "--out", str(ckpt),
               "--layers", "1", "--width", "6", "--epochs", "2",
               "--batch-size", "4", "--patch-size", "16", "--seed", "1"])
    assert rc == 0
    return ckpt


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_layout_and_config(dataset):
    assert (dataset / "spec.json").exists()
    assert (dataset / "run_config.json").exists()
    assert len(list((dataset / "train").glob("*_lrms.ten"))) == 2
    assert len(list((dataset / "val").glob("*_pan.ten"))) == 1
    assert len(list((dataset / "test").glob("*_gt.ten"))) == 2
    lrms = load_ten(dataset / "train" / "0000_lrms.ten")
    gt = load_ten(dataset / "train" / "0000_gt.ten")
    assert lrms.shape == (8, 8, 3) and gt.shape == (16, 16, 3)
    cfg = json.loads((dataset / "run_config.json").read_text())
    assert cfg["command"] == "synth" and cfg["seed"] == 7


def test_synth_is_byte_deterministic(dataset, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--out", str(again), "--train", "2", "--val", "1",
                 "--test", "2", "--size", "16", "--bands", "3", "--ratio", "2",
                 "--blur-size", "5", "--blur-sigma", "1.0", "--seed", "7"]) == 0
    for rel in ["train/0001_lrms.ten", "val/0000_pan.ten", "test/0001_gt.ten"]:
        assert (again / rel).read_bytes() == (dataset / rel).read_bytes()


def test_synth_rejects_bad_geometry(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path / "d"), "--size", "15",
               "--ratio", "2"])
    assert rc == 2
    assert "divisible" in capsys.readouterr().err


def test_train_outputs(checkpoint):
    assert (checkpoint / "config.json").exists()
    assert (checkpoint / "layer00_ms_down1_weight.ten").exists()
    rows = _read_csv(checkpoint / "training_trace.csv")
    assert rows[0] == ["epoch", "train_loss", "val_psnr"]
    assert len(rows) == 3  # header + 2 epochs
    cfg = json.loads((checkpoint / "run_config.json").read_text())
    assert cfg["command"] == "train"
    assert cfg["parameters"] > 0 and 1 <= cfg["best_epoch"] <= 2


def test_train_missing_dataset(tmp_path, capsys):
    rc = main(["train", "--data", str(tmp_path / "nowhere"),
               "--out", str(tmp_path / "ckpt")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_eval_baselines(dataset, tmp_path, capsys):
    out = tmp_path / "scores.csv"
    rc = main(["eval", "--data", str(dataset), "--split", "test",
               "--out", str(out)])
    assert rc == 0
    rows = _read_csv(out)
    assert rows[0] == ["method", "psnr", "ssim", "sam", "ergas"]
    assert [r[0] for r in rows[1:]] == ["bicubic", "ihs", "brovey", "hpf", "sfim"]
    for r in rows[1:]:
        assert float(r[1]) > 0.0  # parseable finite psnr
    assert out.with_name("scores.run.json").exists()
    assert "bicubic" in capsys.readouterr().out


def test_eval_with_network_and_gp(dataset, checkpoint, tmp_path):
    out = tmp_path / "full.csv"
    rc = main(["eval", "--data", str(dataset), "--split", "test",
               "--out", str(out), "--methods", "bicubic,gp,network",
               "--ckpt", str(checkpoint), "--gp-rounds", "10"])
    assert rc == 0
    rows = _read_csv(out)
    assert [r[0] for r in rows[1:]] == ["bicubic", "gp", "network"]


def test_eval_network_requires_ckpt(dataset, tmp_path, capsys):
    rc = main(["eval", "--data", str(dataset), "--out", str(tmp_path / "x.csv"),
               "--methods", "network"])
    assert rc == 2
    assert "checkpoint" in capsys.readouterr().err


def test_eval_unknown_method(dataset, tmp_path, capsys):
    rc = main(["eval", "--data", str(dataset), "--out", str(tmp_path / "x.csv"),
               "--methods", "wavelet"])
    assert rc == 2
    assert "unknown method" in capsys.readouterr().err


def test_fuse_baseline_writes_ten(dataset, tmp_path):
    out = tmp_path / "fused.ten"
    rc = main(["fuse", "--data", str(dataset), "--split", "test", "--index", "0",
               "--method", "bicubic", "--out", str(out)])
    assert rc == 0
    img = load_ten(out)
    assert img.shape == (16, 16, 3)
    assert np.isfinite(img).all() and img.min() >= 0.0
    # written back in scene units, so values can exceed the normalized range
    lrms = load_ten(dataset / "test" / "0000_lrms.ten")
    assert img.max() <= float(lrms.max()) + 1e-5
    assert out.with_name("fused.run.json").exists()


def test_fuse_gp_with_trace_and_preview(dataset, tmp_path):
    out = tmp_path / "gp.ten"
    trace = tmp_path / "trace.csv"
    ppm = tmp_path / "view.ppm"
    rc = main(["fuse", "--data", str(dataset), "--method", "gp",
               "--out", str(out), "--gp-rounds", "8", "--trace", str(trace),
               "--preview", str(ppm)])
    assert rc == 0
    rows = _read_csv(trace)
    assert rows[0] == ["round", "f", "g"]
    assert len(rows) == 10  # header + initial point + 8 rounds
    fs = [float(r[1]) for r in rows[1:]]
    assert fs[-1] < fs[0]
    raw = ppm.read_bytes()
    assert raw.startswith(b"P6\n16 16\n255\n")
    assert len(raw) == len(b"P6\n16 16\n255\n") + 16 * 16 * 3


def test_fuse_network(dataset, checkpoint, tmp_path):
    out = tmp_path / "net.ten"
    rc = main(["fuse", "--data", str(dataset), "--method", "network",
               "--out", str(out), "--ckpt", str(checkpoint)])
    assert rc == 0
    assert load_ten(out).shape == (16, 16, 3)


def test_fuse_trace_requires_gp(dataset, tmp_path, capsys):
    rc = main(["fuse", "--data", str(dataset), "--method", "bicubic",
               "--out", str(tmp_path / "x.ten"), "--trace", str(tmp_path / "t.csv")])
    assert rc == 2
    assert "gp" in capsys.readouterr().err
    assert not (tmp_path / "x.ten").exists()  # nothing written on bad usage


def test_fuse_index_out_of_range(dataset, tmp_path, capsys):
    rc = main(["fuse", "--data", str(dataset), "--index", "99",
               "--method", "bicubic", "--out", str(tmp_path / "x.ten")])
    assert rc == 2
    assert "out of range" in capsys.readouterr().err


def test_ablate_five_variants(dataset, tmp_path):
    out = tmp_path / "ablations.csv"
    rc = main(["ablate", "--data", str(dataset), "--out", str(out),
               "--layers", "1", "--width", "6", "--epochs", "1",
               "--batch-size", "4", "--patch-size", "16", "--seed", "0"])
    assert rc == 0
    rows = _read_csv(out)
    assert rows[0] == ["variant", "params", "psnr", "ssim", "sam", "ergas"]
    variants = [r[0] for r in rows[1:]]
    assert variants == ["none", "no_prox", "shared_weights", "fused_block",
                        "transposed_kernels"]
    params = {r[0]: int(r[1]) for r in rows[1:]}
    assert params["no_prox"] < params["none"]
    assert params["transposed_kernels"] < params["none"]


def test_sweep_grid_and_best(dataset, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--data", str(dataset), "--out", str(out),
               "--layers", "1,2", "--widths", "6", "--epochs", "1",
               "--batch-size", "4", "--patch-size", "16"])
    assert rc == 0
    rows = _read_csv(out)
    assert rows[0] == ["layers", "width", "val_psnr"]
    assert [(r[0], r[1]) for r in rows[1:]] == [("1", "6"), ("2", "6")]
    assert "best: layers" in capsys.readouterr().out


def test_sweep_bad_grid(dataset, tmp_path, capsys):
    rc = main(["sweep", "--data", str(dataset), "--out", str(tmp_path / "s.csv"),
               "--layers", "two"])
    assert rc == 2
    assert "integers" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    rc = main(["gradcheck"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "network_end_to_end" in out
    assert "all" in out and "passed" in out


def test_gradcheck_fails_on_absurd_tolerance(capsys):
    rc = main(["gradcheck", "--tol", "1e-18", "--tol-e2e", "1e-18"])
    assert rc == 1
    assert "FAILED" in capsys.readouterr().err
