"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the summary section at the end
lists every criterion. The end-to-end comparison (criterion 7) trains six small
models and takes a few minutes on one CPU core.
"""
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from damageseg.cli import main
from damageseg.config import load_config, override
from damageseg.inference import evaluate
from damageseg.losses import dice_loss, ohem_loss, ohem_select, pixel_ce_map, total_loss
from damageseg.metrics import iou_per_class, mean_iou
from damageseg.model import ModelConfig, init_parameters, to_batch
from damageseg.sampler import SamplePolicy, sample_crop
from damageseg.selftest import central_diff, model_param_gradcheck, rel_err
from damageseg.synth import generate_synthetic_scene, scene_seed
from damageseg.tiler import TileSpec, plan_tiles, tiled_inference
from damageseg.trainer import train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


# 1 ---------------------------------------------------------------------------


def test_c1_tile_arithmetic(criterion):
    t0 = time.perf_counter()
    grid = plan_tiles(3000, 4000, TileSpec(tile_size=1024, stride=768))
    n = len(grid)
    marks = np.zeros((3000, 4000), dtype=np.int32)
    for r, c in grid.origins:
        marks[r : r + 1024, c : c + 1024] += 1
    covered = marks.min() >= 1 and np.array_equal(marks, grid.overlap_counts())
    elapsed = time.perf_counter() - t0
    ok = n == 20 and covered and elapsed < 1.0
    criterion("C1 tile arithmetic", ok, f"{n} windows, min overlap {marks.min()}, {elapsed:.3f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

METHOD_ROW = [85.02, 88.80, 69.06, 72.93, 72.05, 63.64, 82.88, 41.28, 81.25, 87.53, 76.22]
BASELINE_ROW = [85.70, 89.60, 71.20, 61.20, 50.80, 60.20, 83.20, 45.80, 82.80, 84.90, 77.20]


def test_c2_miou_aggregation(criterion):
    a, b = mean_iou(METHOD_ROW), mean_iou(BASELINE_ROW)
    ok = abs(a - 74.61) <= 0.01 and abs(b - 72.06) <= 0.01
    criterion("C2 mIoU aggregation", ok, f"method row {a:.4f} (74.61), baseline row {b:.4f} (72.06)")
    assert ok


# 3 ---------------------------------------------------------------------------


def test_c3_ohem_identity_and_topk(criterion):
    rng = np.random.default_rng(2024)
    worst, mismatches = 0.0, 0
    for _ in range(100):
        h, w, C = (int(v) for v in rng.integers(2, 9, size=3))
        logits = rng.normal(size=(h, w, C)) * rng.uniform(0.1, 4.0)
        if rng.random() < 0.5:
            logits = np.round(logits)  # forces exact ties
        labels = rng.integers(0, C, size=(h, w)).astype(np.uint8)
        labels[rng.random((h, w)) < 0.15] = 255
        labels[0, 0] = 0
        # reference mean cross-entropy, pixel by pixel
        ces = []
        for i in range(h):
            for j in range(w):
                if labels[i, j] != 255:
                    z = logits[i, j]
                    m = z.max()
                    ces.append(m + np.log(np.exp(z - m).sum()) - z[labels[i, j]])
        ref = float(np.mean(ces))
        k = len(ces) + int(rng.integers(0, 10))
        loss, _, kept = ohem_loss(logits, labels, k)
        worst = max(worst, abs(loss - ref))
        assert kept == len(ces)

        ce, valid = pixel_ce_map(logits, labels)
        kk = int(rng.integers(1, len(ces) + 1))
        flat, vflat = ce.ravel(), valid.ravel()
        oracle = sorted((i for i in range(flat.size) if vflat[i]), key=lambda i: (-flat[i], i))[:kk]
        mismatches += ohem_select(ce, valid, kk).tolist() != oracle
    ok = worst <= 1e-10 and mismatches == 0
    criterion("C3 OHEM identity / top-k", ok, f"max |OHEM(k>=N) - CE| = {worst:.1e}; top-k mismatches {mismatches}/100")
    assert ok


# 4 ---------------------------------------------------------------------------


def test_c4_gradient_correctness(criterion):
    t0 = time.perf_counter()
    worst = {"dice": 0.0, "ohem": 0.0, "total": 0.0}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(4, 4, 3))
        labels = rng.integers(0, 3, size=(4, 4)).astype(np.uint8)
        k = int(rng.integers(1, 17))
        checks = {
            "dice": (lambda z: dice_loss(z, labels)[0], dice_loss(logits, labels)[1]),
            "ohem": (lambda z: ohem_loss(z, labels, k)[0], ohem_loss(logits, labels, k)[1]),
            "total": (lambda z: total_loss(z, labels, k)[0].loss_total, total_loss(logits, labels, k)[1]),
        }
        for name, (value, analytic) in checks.items():
            numeric = central_diff(value, logits, 1e-5)
            worst[name] = max(worst[name], float(rel_err(analytic, numeric).max()))
    errs = model_param_gradcheck(seed=0, n_params=50, size=32)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and len(errs) >= 50 and max(errs) < 1e-3 and elapsed < 120
    detail = (", ".join(f"{k} {v:.1e}" for k, v in worst.items())
              + f"; model {len(errs)} params max {max(errs):.1e}; {elapsed:.0f}s")
    criterion("C4 gradient correctness", ok, detail)
    assert ok


# 5 ---------------------------------------------------------------------------


def test_c5_tiling_consistency(criterion):
    rng = np.random.default_rng(5)
    worst_const, worst_sum = 0.0, 0.0
    for tile, stride, H, W in [(64, 40, 100, 150), (32, 7, 90, 61), (1024, 768, 1100, 1300), (64, 64, 64, 200)]:
        q = rng.dirichlet(np.ones(5)).astype(np.float32)
        image = rng.random((H, W, 3)).astype(np.float32)
        single = np.broadcast_to(q, (H, W, 5))
        out = tiled_inference(lambda t: np.broadcast_to(q, t.shape[:2] + (5,)).copy(), image, TileSpec(tile, stride))
        worst_const = max(worst_const, float(np.abs(out - single).max()))
    # a non-constant softmax model: outputs must still be distributions
    model = init_parameters(ModelConfig(), 0).eval()

    def run(t):
        with torch.no_grad():
            return torch.softmax(model(to_batch(t)), 1)[0].permute(1, 2, 0).numpy()

    out = tiled_inference(run, rng.random((160, 200, 3)).astype(np.float32), TileSpec(64, 48))
    worst_sum = float(np.abs(out.sum(-1) - 1.0).max())
    ok = worst_const <= 1e-6 and worst_sum <= 1e-5
    criterion("C5 tiling consistency", ok, f"max |tiled - single| = {worst_const:.1e}; max |sum - 1| = {worst_sum:.1e}")
    assert ok


# 6 ---------------------------------------------------------------------------


def test_c6_sampler_bias(criterion):
    mask = np.zeros((256, 256), dtype=np.uint8)
    mask[200:210, 30:45] = 4
    mask[10:14, 180:190] = 3
    image = np.zeros((256, 256, 3), np.float32)
    policy = SamplePolicy(crop_size=64, rare_fraction=0.5)
    rng = np.random.default_rng(6)
    hits = sum(sample_crop(image, mask, policy, rng).rare_centered for _ in range(10_000))
    frac = hits / 10_000
    ok = abs(frac - 0.5) <= 0.02
    criterion("C6 sampler bias", ok, f"rare-centred fraction {frac:.4f} over 10000 crops")
    assert ok


# 7 ---------------------------------------------------------------------------


def _rare_miou(cfg, seed, train_set, test_set):
    cfg = override(cfg, None, seed=seed)
    res = train(train_set, cfg.model, cfg.train, cfg.ohem, cfg.dice, cfg.sampler, cfg.augment)
    ious = iou_per_class(evaluate(res.model, test_set, cfg.tiles, cfg.classes.num_classes))
    return float(np.nanmean(ious[list(cfg.classes.rare_set)]))


@pytest.mark.slow
def test_c7_end_to_end_direction(criterion):
    torch.set_num_threads(1)
    method_cfg = load_config(CONFIGS / "desk.yaml")
    control_cfg = load_config(CONFIGS / "desk_control.yaml")
    spec = method_cfg.synth.spec()
    train_set = [generate_synthetic_scene(scene_seed(0, "train", i), spec) for i in range(64)]
    test_set = [generate_synthetic_scene(scene_seed(0, "test", i), spec) for i in range(16)]
    t0 = time.perf_counter()
    method = np.array([_rare_miou(method_cfg, s, train_set, test_set) for s in range(3)])
    control = np.array([_rare_miou(control_cfg, s, train_set, test_set) for s in range(3)])
    elapsed = time.perf_counter() - t0
    margin = method.mean() - control.mean()
    spread = max(method.std(), control.std(), (method - control).std())
    ok = margin > 0 and margin > spread and elapsed < 30 * 60
    detail = (f"rare mIoU method {method.mean():.3f}±{method.std():.3f} vs control "
              f"{control.mean():.3f}±{control.std():.3f}; margin {margin:.3f} > spread {spread:.3f}; {elapsed:.0f}s")
    criterion("C7 end-to-end direction", ok, detail)
    assert ok


# 8 ---------------------------------------------------------------------------


def test_c8_shape_contract(criterion):
    model = init_parameters(ModelConfig(), 0).eval()
    seen = []
    ok = True
    for size in (64, 128, 256):
        with torch.no_grad():
            feats = model.encode(torch.zeros(1, 3, size, size))
            logits = model.decode(feats)
            full = model(torch.zeros(1, 3, size, size))
        sides = [tuple(f.shape[-2:]) for f in feats]
        ok &= sides == [(size // r, size // r) for r in (4, 8, 16, 32)]
        ok &= tuple(logits.shape) == (1, 11, size // 4, size // 4)
        ok &= tuple(full.shape) == (1, 11, size, size)
        seen.append(f"{size}: {[s[0] for s in sides]} -> {size // 4}x{size // 4}x11")
    criterion("C8 shape contract", bool(ok), "; ".join(seen))
    assert ok


# 9 ---------------------------------------------------------------------------


def test_c9_determinism(criterion, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 5\nsynth: {height: 64, width: 64}\nsampler: {crop_size: 32}\n"
                   "train: {epochs: 2, batch_size: 2, lr0: 0.001}\n")
    assert main(["synth", "--config", str(cfg), "--count", "4", "--out", str(tmp_path / "data")]) == 0
    finals = []
    for run in ("a", "b"):
        rc = main(["train", "--config", str(cfg), "--data", str(tmp_path / "data"),
                   "--run-dir", str(tmp_path / run), "--deterministic"])
        assert rc == 0
        finals.append((tmp_path / run / "checkpoints" / "final.ckpt").read_bytes())
    ok = finals[0] == finals[1]
    criterion("C9 determinism", ok, f"final checkpoints {'identical' if ok else 'differ'} ({len(finals[0])} bytes)")
    assert ok
