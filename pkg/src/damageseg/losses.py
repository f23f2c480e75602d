"""Pixel cross-entropy, top-k hard pixel mining, soft Dice and their sum.

All functions take logits of shape ``(..., C)`` and integer labels of shape
``(...)``; pixels carrying ``ignore_id`` are excluded from every sum and from
the hard-pixel ranking. Each loss returns its gradient with respect to the
logits so callers can push it back through any differentiable model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import IGNORE_ID


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class OhemConfig:
    k: int | None = None  # None: round(keep_ratio * crop pixels)
    keep_ratio: float = 0.1

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ValueError(f"OHEM k must be >= 1, got {self.k}")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")

    def resolve(self, crop_pixels: int) -> int:
        if self.k is not None:
            return self.k
        return max(1, int(round(self.keep_ratio * crop_pixels)))


@dataclass(frozen=True)
class DiceConfig:
    epsilon: float = 1.0
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"Dice epsilon must be > 0, got {self.epsilon}")
        if self.class_weights is not None and any(w < 0 for w in self.class_weights):
            raise ValueError("Dice class weights must be non-negative")


@dataclass
class LossReport:
    loss_ohem: float
    loss_dice: float
    loss_total: float
    kept_pixels: int
    dice_per_class: np.ndarray = field(repr=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check(logits: np.ndarray, labels: np.ndarray) -> None:
    if logits.shape[:-1] != labels.shape:
        raise ValueError(f"logits {logits.shape} do not match labels {labels.shape}")
    finite = np.isfinite(logits).all(axis=-1)
    if not finite.all():
        where = tuple(int(v) for v in np.argwhere(~finite)[0])
        raise ValueError(f"non-finite logits at pixel {where}")


def pixel_ce_map(
    logits: np.ndarray, labels: np.ndarray, ignore_id: int = IGNORE_ID
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ``-log softmax(logits)[label]`` and the valid-pixel mask.

    Ignored pixels get loss 0 and ``valid == False``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    _check(logits, labels)
    valid = labels != ignore_id
    safe = np.where(valid, labels, 0).astype(np.intp)
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, safe[..., None], axis=-1)[..., 0]
    return np.where(valid, lse - picked, 0.0), valid


def ohem_select(losses: np.ndarray, valid: np.ndarray, k: int) -> np.ndarray:
    """Flat raster indices of the ``min(k, n_valid)`` largest losses, hardest first.

    Equal losses are ranked by ascending raster index.
    """
    flat = np.asarray(losses, dtype=np.float64).ravel()
    idx = np.flatnonzero(np.asarray(valid).ravel())
    if idx.size == 0:
        raise EmptyBatchError("no valid (non-ignore) pixels to select from")
    # stable sort on the negated loss keeps ascending index among ties
    order = np.argsort(-flat[idx], kind="stable")
    return idx[order[: min(int(k), idx.size)]]


def ohem_loss(
    logits: np.ndarray, labels: np.ndarray, k: int, ignore_id: int = IGNORE_ID
) -> tuple[float, np.ndarray, int]:
    """Mean cross-entropy over the hard set; returns (loss, dL/dlogits, |hard set|)."""
    logits = np.asarray(logits, dtype=np.float64)
    ce, valid = pixel_ce_map(logits, labels, ignore_id)
    keep = ohem_select(ce, valid, k)
    n = keep.size
    loss = float(ce.ravel()[keep].sum() / n)

    C = logits.shape[-1]
    flat_logits = logits.reshape(-1, C)
    flat_labels = labels.ravel()
    grad = np.zeros_like(flat_logits)
    g = softmax(flat_logits[keep])
    g[np.arange(n), flat_labels[keep].astype(np.intp)] -= 1.0
    grad[keep] = g / n
    return loss, grad.reshape(logits.shape), n


def _dice_terms(probs, labels, num_classes, ignore_id):
    valid = (labels != ignore_id).reshape(-1)
    p = probs.reshape(-1, num_classes)[valid]
    lab = labels.reshape(-1)[valid].astype(np.intp)
    onehot = np.zeros_like(p)
    onehot[np.arange(lab.size), lab] = 1.0
    inter = (p * onehot).sum(axis=0)
    return valid, p, onehot, inter, p.sum(axis=0), onehot.sum(axis=0)


def dice_per_class(
    probs: np.ndarray, labels: np.ndarray, cfg: DiceConfig = DiceConfig(), ignore_id: int = IGNORE_ID
) -> np.ndarray:
    """Smoothed ``(2 sum p*g + eps) / (sum p + sum g + eps)`` for every class."""
    probs = np.asarray(probs, dtype=np.float64)
    _, _, _, inter, psum, gsum = _dice_terms(probs, labels, probs.shape[-1], ignore_id)
    return (2.0 * inter + cfg.epsilon) / (psum + gsum + cfg.epsilon)


def _weights(cfg: DiceConfig, C: int) -> np.ndarray:
    if cfg.class_weights is None:
        return np.full(C, 1.0 / C)
    w = np.asarray(cfg.class_weights, dtype=np.float64)
    if w.size != C:
        raise ValueError(f"{w.size} Dice class weights for {C} classes")
    return w / w.sum()


def dice_loss(
    logits: np.ndarray, labels: np.ndarray, cfg: DiceConfig = DiceConfig(), ignore_id: int = IGNORE_ID
) -> tuple[float, np.ndarray, np.ndarray]:
    """``1 - mean_c Dice_c`` on softmax probabilities; returns (loss, dL/dlogits, Dice_c)."""
    logits = np.asarray(logits, dtype=np.float64)
    _check(logits, labels)
    C = logits.shape[-1]
    probs = softmax(logits)
    valid, p, onehot, inter, psum, gsum = _dice_terms(probs, labels, C, ignore_id)
    num = 2.0 * inter + cfg.epsilon
    den = psum + gsum + cfg.epsilon
    dice = num / den
    w = _weights(cfg, C)
    loss = float(1.0 - (w * dice).sum())

    # dDice_c/dp_ic = 2 g_ic / den_c - num_c / den_c^2
    dp = -w * (2.0 * onehot / den - num / den**2)
    dz = p * (dp - (p * dp).sum(axis=1, keepdims=True))
    grad = np.zeros((valid.size, C))
    grad[valid] = dz
    return loss, grad.reshape(logits.shape), dice


def total_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    k: int,
    dice_cfg: DiceConfig = DiceConfig(),
    ignore_id: int = IGNORE_ID,
) -> tuple[LossReport, np.ndarray]:
    """Unweighted sum of the hard-pixel CE and Dice losses, with its logit gradient."""
    l_ohem, g_ohem, kept = ohem_loss(logits, labels, k, ignore_id)
    l_dice, g_dice, dice = dice_loss(logits, labels, dice_cfg, ignore_id)
    report = LossReport(l_ohem, l_dice, l_ohem + l_dice, kept, dice)
    return report, g_ohem + g_dice


def cross_entropy_loss(
    logits: np.ndarray, labels: np.ndarray, ignore_id: int = IGNORE_ID
) -> tuple[float, np.ndarray, int]:
    """Plain mean CE over all valid pixels (the unmined baseline objective)."""
    ce, valid = pixel_ce_map(logits, labels, ignore_id)
    n = int(valid.sum())
    if n == 0:
        raise EmptyBatchError("no valid (non-ignore) pixels")
    return ohem_loss(logits, labels, n, ignore_id)
