"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one pass line (visible with -v / -s); the overfit criterion
dominates the runtime of the suite at a few minutes of CPU.
"""

import time

import numpy as np
import pytest

from mambaseg import gradcheck
from mambaseg.audit import compare_report
from mambaseg.data import load_samples, load_split, synth_generate
from mambaseg.metrics import confusion, metrics_from_counts
from mambaseg.net import NetConfig, build, forward, load_checkpoint
from mambaseg.objective import LossConfig, bce, dice_loss, squared_dice_loss
from mambaseg.rng import Xoshiro256
from mambaseg.ssm import selective_scan
from mambaseg.tensor import Tensor, from_array, make
from mambaseg.train import TrainConfig, train_loop

from test_metrics import brute_force_counts
from test_objective import ref_bce, ref_dice, ref_sq_dice


def _report(n, detail):
    print(f"criterion {n}: PASS - {detail}")


def test_criterion_01_efficiency_audit_vs_reference_table():
    t0 = time.time()
    rows = compare_report(variants=(1, 2, 4, 8), input_size=256)
    elapsed = time.time() - t0

    params = [r.params_millions for r in rows]
    assert params == sorted(params, reverse=True) and len(set(params)) == 4
    for row, ref in zip(rows, (0.139, 0.100, 0.081, 0.071)):
        assert row.reference_params == ref
        assert abs(row.params_dev_pct) <= 25.0, row
    for row, ref in zip(rows, (0.064, 0.059, 0.057, 0.055)):
        assert row.reference_gflops == ref
        assert abs(row.gflops_dev_pct) <= 30.0, row
    assert rows[3].gflops < 0.072
    assert elapsed < 5.0
    _report(1, f"params dev {[round(r.params_dev_pct, 1) for r in rows]}%, "
               f"gflops dev {[round(r.gflops_dev_pct, 1) for r in rows]}%, "
               f"{elapsed:.1f}s")


def test_criterion_02_gradient_correctness_all_ops_blocks_losses():
    t0 = time.time()
    results = gradcheck.run_all(seed=3, tol=1e-4)
    elapsed = time.time() - t0
    failed = [r for r in results if not r.passed]
    assert not failed, failed
    expected = {"conv2d", "conv2d_depthwise", "conv1d_causal", "linear",
                "layer_norm_tokens", "layer_norm_image", "batch_norm_train",
                "leaky_relu", "silu", "sigmoid", "softplus", "maxpool2d",
                "bilinear_upsample", "mamba_layer", "conv_block", "token_path",
                "hybrid_block_k1", "hybrid_block_k2", "bce", "dice_loss",
                "squared_dice_loss", "base_loss", "group_loss"}
    assert {r.name for r in results} >= expected
    assert elapsed < 120.0
    worst = max(r.max_rel_err for r in results)
    _report(2, f"{len(results)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_03_loss_oracle_equivalence():
    cfg = LossConfig()
    for seed in range(50):
        rng = Xoshiro256(seed, "acc3")
        n = 16 + rng.randint(32)
        p = np.array([rng.uniform() for _ in range(n)])
        y = np.array([1.0 if rng.uniform() > 0.5 else 0.0 for _ in range(n)])
        pt, yt = from_array(p, dtype="f64"), from_array(y, dtype="f64")
        assert abs(bce(pt, yt, cfg).item() - ref_bce(p, y, cfg.clamp_eps)) <= 1e-9
        assert abs(dice_loss(pt, yt, cfg.smooth).item()
                   - ref_dice(p, y, cfg.smooth)) <= 1e-9
        assert abs(squared_dice_loss(pt, yt, cfg.smooth).item()
                   - ref_sq_dice(p, y, cfg.smooth)) <= 1e-9

    worked_bce = bce(from_array([0.8, 0.4], dtype="f64"),
                     from_array([1.0, 0.0], dtype="f64")).item()
    assert worked_bce == pytest.approx(0.366958, abs=5e-5)
    p = from_array([1.0, 1.0, 0.0, 0.0], dtype="f64")
    y = from_array([1.0, 0.0, 1.0, 0.0], dtype="f64")
    assert dice_loss(p, y, smooth=1e-12).item() == pytest.approx(0.5, abs=1e-9)
    assert squared_dice_loss(p, y, smooth=1e-12).item() == pytest.approx(0.75, abs=1e-9)
    _report(3, "50 random inputs within 1e-9 of scalar loops; worked values hold")


def test_criterion_04_metric_oracle_equivalence():
    for seed in range(100):
        rng = Xoshiro256(seed, "acc4")
        side = 4 + rng.randint(9)
        pred = np.array([[rng.uniform() for _ in range(side)] for _ in range(side)])
        gt = np.array([[1.0 if rng.uniform() > 0.5 else 0.0 for _ in range(side)]
                       for _ in range(side)])
        assert confusion(pred, gt) == brute_force_counts(pred, gt)
    from mambaseg.metrics import ConfusionCounts
    m = metrics_from_counts(ConfusionCounts(tp=8, fp=2, fn=2, tn=88))
    assert m["dsc"] == pytest.approx(0.8)
    assert m["acc"] == pytest.approx(0.96)
    assert m["se"] == pytest.approx(0.8)
    assert m["sp"] == pytest.approx(88 / 90, abs=1e-5)
    _report(4, "100 random pairs exact; worked row DSC/ACC/SE/SP holds")


def test_criterion_05_scan_causality_and_stability():
    def scan_args(length, seed):
        xs = make([1, length, 4], "gaussian", seed=seed, dtype="f64")
        delta = make([1, length, 4], "gaussian", seed=seed + 1, dtype="f64")
        delta.data[:] = np.abs(delta.data) * 0.1 + 0.01
        a = make([4, 16], "gaussian", seed=seed + 2, dtype="f64")
        a.data[:] = -np.abs(a.data) - 0.2
        b_seq = make([1, length, 16], "gaussian", seed=seed + 3, dtype="f64")
        c_seq = make([1, length, 16], "gaussian", seed=seed + 4, dtype="f64")
        d_skip = make([4], "gaussian", seed=seed + 5, dtype="f64")
        return xs, delta, a, b_seq, c_seq, d_skip

    args = scan_args(48, seed=11)
    base = selective_scan(*args).data
    for t in (0, 7, 23, 46):
        pert = Tensor(args[0].data.copy())
        pert.data[0, t, :] += 1.0
        out = selective_scan(pert, *args[1:]).data
        assert out[:, :t].tobytes() == base[:, :t].tobytes()

    long_args = scan_args(4096, seed=21)
    y = selective_scan(*long_args)
    assert np.all(np.isfinite(y.data))
    _report(5, "single-token perturbations leave earlier outputs bitwise "
               "unchanged; L=4096 scan finite")


def test_criterion_06_desk_scale_overfit(tmp_path):
    t0 = time.time()
    root = tmp_path / "overfit-data"
    synth_generate(8, 64, seed=1, out_root=str(root))
    samples = load_samples(str(root), load_split(str(root)).train, 64)
    net_cfg = NetConfig(patch_count=2, input_size=64)
    train_cfg = TrainConfig(lr=0.001, weight_decay=0.01, seed=1,
                            max_steps=300, epochs=300, t_max=300,
                            batch_size_train=8)
    store, history = train_loop(net_cfg, train_cfg, samples)
    elapsed = time.time() - t0
    final_dsc = history[-1]["val_dsc"]
    assert final_dsc >= 0.95, f"train DSC {final_dsc:.4f}"
    assert elapsed < 600.0
    _report(6, f"train DSC {final_dsc:.4f} after 300 steps in {elapsed:.0f}s")


def test_criterion_07_determinism_and_persistence(tmp_path):
    root = tmp_path / "det-data"
    synth_generate(4, 32, seed=2, out_root=str(root))
    samples = load_samples(str(root), load_split(str(root)).train, 32)
    net_cfg = NetConfig(patch_count=1, input_size=32)
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        out.mkdir()
        train_loop(net_cfg, TrainConfig(seed=7, epochs=2, batch_size_train=4),
                   samples, out_dir=str(out))
        blobs.append((out / "last.ckpt").read_bytes())
    assert blobs[0] == blobs[1]

    loaded = load_checkpoint(tmp_path / "a" / "last.ckpt")
    x = make([1, 3, 32, 32], "gaussian", seed=5)
    reference = build(net_cfg, seed=0)
    reloaded = load_checkpoint(tmp_path / "b" / "last.ckpt", into=reference)
    a = forward(loaded, x).output_logits.data
    b = forward(reloaded, x).output_logits.data
    assert a.tobytes() == b.tobytes()
    _report(7, "two seeded runs byte-identical; round trip forward bitwise equal")


def test_criterion_08_scheduler_endpoints():
    from mambaseg.train import cosine_lr
    cfg = TrainConfig()
    assert cosine_lr(0, cfg) == 0.001
    assert cosine_lr(50, cfg) == 1e-5
    assert cosine_lr(25, cfg) == pytest.approx((0.001 + 1e-5) / 2, abs=1e-12)
    _report(8, "cosine_lr(0) == 0.001 and cosine_lr(50) == 1e-5 exactly")


def test_criterion_09_full_dataset_accuracy_out_of_scope():
    # Published per-dataset accuracy tables require full-scale training on
    # the external corpora; they are explicitly replaced by criteria 1-8.
    _report(9, "full-corpus accuracy reproduction excluded by design; "
               "covered by desk-scale criteria 1-8")
