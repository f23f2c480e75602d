"""Oracle and invariant checks that can run outside pytest (``damageseg selftest``).

Each check compares a production path against an independent computation:
central finite differences for gradients, a full sort for top-k selection,
and explicit window arithmetic for tile coverage.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .losses import dice_loss, ohem_loss, ohem_select, pixel_ce_map, total_loss
from .model import ModelConfig, init_parameters, to_batch
from .tiler import TileSpec, plan_tiles


def rel_err(a, n, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x, dtype=np.float64)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def loss_gradcheck(seed: int, shape=(4, 4), num_classes: int = 3, k: int = 6, h: float = 1e-5) -> dict[str, float]:
    """Max relative error of analytic logit gradients for Dice, OHEM and their sum."""
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=shape + (num_classes,))
    labels = rng.integers(0, num_classes, size=shape).astype(np.uint8)
    out = {}
    _, g, _ = dice_loss(logits, labels)
    out["dice"] = float(rel_err(g, central_diff(lambda z: dice_loss(z, labels)[0], logits, h)).max())
    _, g, _ = ohem_loss(logits, labels, k)
    out["ohem"] = float(rel_err(g, central_diff(lambda z: ohem_loss(z, labels, k)[0], logits, h)).max())
    _, g = total_loss(logits, labels, k)
    out["total"] = float(rel_err(g, central_diff(lambda z: total_loss(z, labels, k)[0].loss_total, logits, h)).max())
    return out


def model_param_gradcheck(seed: int = 0, n_params: int = 50, size: int = 32, h: float = 1e-3,
                          config: ModelConfig = ModelConfig()) -> list[float]:
    """Relative errors of autograd parameter gradients of the total loss vs central differences.

    Runs in float64 on one random ``size``x``size`` image with random labels and
    k = 10% of the pixels; ``n_params`` scalar parameters are drawn uniformly.
    """
    rng = np.random.default_rng(seed)
    model = init_parameters(config, seed, torch.float64)
    x = to_batch(rng.random((size, size, 3)), torch.float64)
    labels = rng.integers(0, config.num_classes, size=(1, size, size)).astype(np.uint8)
    k = max(1, round(0.1 * size * size))

    def evaluate(with_grad: bool):
        logits = model(x)
        lg = logits.detach().permute(0, 2, 3, 1).numpy()
        rep, g = total_loss(lg, labels, k)
        if with_grad:
            logits.backward(torch.from_numpy(g).permute(0, 3, 1, 2))
        return rep.loss_total

    params = dict(model.named_parameters())
    for p in params.values():
        p.grad = None
    evaluate(True)
    flat = [(name, i) for name, p in params.items() for i in range(p.numel())]
    picks = rng.choice(len(flat), size=n_params, replace=False)
    errs = []
    with torch.no_grad():
        for j in picks:
            name, i = flat[j]
            p = params[name].view(-1)
            analytic = params[name].grad.view(-1)[i].item()
            old = p[i].item()
            p[i] = old + h
            up = evaluate(False)
            p[i] = old - h
            down = evaluate(False)
            p[i] = old
            errs.append(float(rel_err(analytic, (up - down) / (2.0 * h))))
    return errs


def ohem_identity_check(n_instances: int = 100, seed: int = 0) -> tuple[float, int]:
    """(max |L_OHEM(k >= N) - mean CE|, number of top-k mismatches vs a full sort)."""
    rng = np.random.default_rng(seed)
    worst, mismatches = 0.0, 0
    for _ in range(n_instances):
        h, w, C = (int(v) for v in rng.integers(2, 9, size=3))
        logits = rng.normal(size=(h, w, C)) * rng.uniform(0.1, 5.0)
        labels = rng.integers(0, C, size=(h, w)).astype(np.uint8)
        labels[rng.random((h, w)) < 0.1] = 255
        if (labels != 255).sum() == 0:
            labels[0, 0] = 0
        # quantise so that ties actually occur
        if rng.random() < 0.5:
            logits = np.round(logits)
        ce, valid = pixel_ce_map(logits, labels)
        n_valid = int(valid.sum())
        full, _, _ = ohem_loss(logits, labels, h * w + int(rng.integers(0, 5)))
        mean_ce = ce[valid].mean()
        worst = max(worst, abs(full - mean_ce))

        k = int(rng.integers(1, n_valid + 1))
        got = ohem_select(ce, valid, k).tolist()
        flat = ce.ravel()
        ranked = sorted((i for i in range(flat.size) if valid.ravel()[i]), key=lambda i: (-flat[i], i))
        mismatches += got != ranked[:k]
    return worst, mismatches


def tiling_coverage_check(n_cases: int = 50, seed: int = 0) -> int:
    """Number of random grids whose overlap counts disagree with brute-force window marking."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(n_cases):
        tile = 32 * int(rng.integers(1, 4))
        stride = int(rng.integers(1, tile + 1))
        H = tile + int(rng.integers(0, 200))
        W = tile + int(rng.integers(0, 200))
        grid = plan_tiles(H, W, TileSpec(tile, stride))
        marks = np.zeros((H, W), dtype=np.int32)
        for r, c in grid.origins:
            assert r + tile <= H and c + tile <= W
            marks[r : r + tile, c : c + tile] += 1
        if marks.min() < 1 or not np.array_equal(marks, grid.overlap_counts()):
            failures += 1
    return failures


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def run_all(include_model: bool = True) -> list[CheckResult]:
    results = []

    def record(name, fn):
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, passed, detail, time.perf_counter() - t0))

    def tiles():
        n = len(plan_tiles(3000, 4000, TileSpec(1024, 768)))
        bad = tiling_coverage_check()
        return n == 20 and bad == 0, f"3000x4000 -> {n} tiles; {bad} coverage failures"

    def ohem():
        worst, mism = ohem_identity_check()
        return worst < 1e-10 and mism == 0, f"max |OHEM(k>=N) - CE| = {worst:.2e}; top-k mismatches = {mism}"

    def loss_grads():
        worst = {}
        for s in range(5):
            for key, v in loss_gradcheck(s).items():
                worst[key] = max(worst.get(key, 0.0), v)
        return all(v < 1e-5 for v in worst.values()), ", ".join(f"{k}={v:.1e}" for k, v in worst.items())

    def model_grads():
        errs = model_param_gradcheck(seed=0, n_params=50)
        return max(errs) < 1e-3, f"{len(errs)} params, max rel err {max(errs):.2e}"

    record("tiling", tiles)
    record("ohem", ohem)
    record("loss_gradients", loss_grads)
    if include_model:
        record("model_gradients", model_grads)
    return results
