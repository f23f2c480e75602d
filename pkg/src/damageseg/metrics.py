"""Confusion-matrix accumulation and per-class / mean IoU."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import numpy as np

from .datamodel import IGNORE_ID, ClassTable


class ConfusionMatrix:
    """``counts[g, p]`` = pixels with ground truth ``g`` predicted as ``p``."""

    def __init__(self, num_classes: int, ignore_id: int = IGNORE_ID):
        self.num_classes = num_classes
        self.ignore_id = ignore_id
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, predicted: np.ndarray, truth: np.ndarray) -> "ConfusionMatrix":
        if predicted.shape != truth.shape:
            raise ValueError(f"prediction {predicted.shape} and truth {truth.shape} differ in shape")
        C = self.num_classes
        valid = truth != self.ignore_id
        g = truth[valid].astype(np.int64)
        p = predicted[valid].astype(np.int64)
        if g.size and (g.max() >= C or p.max() >= C or p.min() < 0):
            raise ValueError("label outside the class range")
        self.counts += np.bincount(g * C + p, minlength=C * C).reshape(C, C)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes, self.ignore_id)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts)

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp


def accumulate(cm: ConfusionMatrix, predicted: np.ndarray, truth: np.ndarray) -> ConfusionMatrix:
    return cm.accumulate(predicted, truth)


def confusion_from_pairs(pairs: Iterable[tuple[np.ndarray, np.ndarray]], num_classes: int,
                         ignore_id: int = IGNORE_ID) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes, ignore_id)
    for pred, truth in pairs:
        cm.accumulate(pred, truth)
    return cm


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """TP / (TP + FP + FN) per class; NaN where the denominator is zero (undefined)."""
    den = cm.tp + cm.fp + cm.fn
    out = np.full(cm.num_classes, np.nan)
    nz = den > 0
    out[nz] = cm.tp[nz] / den[nz]
    return out


def mean_iou(ious, undefined: str = "exclude") -> float:
    """Mean over classes. ``undefined`` is ``"exclude"`` (drop NaNs) or ``"zero"``."""
    arr = np.asarray(ious, dtype=np.float64)
    if undefined == "zero":
        arr = np.nan_to_num(arr, nan=0.0)
    elif undefined != "exclude":
        raise ValueError(f"unknown undefined-class policy {undefined!r}")
    defined = arr[~np.isnan(arr)]
    if defined.size == 0:
        return float("nan")
    return float(defined.mean())


def report(cm: ConfusionMatrix, table: ClassTable, path: str | Path | None = None,
           undefined: str = "exclude") -> dict:
    """Per-class IoU rows plus mIoU; optionally written as CSV."""
    ious = iou_per_class(cm)
    rows = []
    for i, name in table.classes:
        rows.append({
            "class_id": i,
            "name": name,
            "iou": None if np.isnan(ious[i]) else float(ious[i]),
            "gt_pixels": int(cm.counts[i].sum()),
            "pred_pixels": int(cm.counts[:, i].sum()),
            "tp": int(cm.tp[i]),
        })
    miou = mean_iou(ious, undefined)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", "name", "iou", "gt_pixels", "pred_pixels", "tp"])
            for r in rows:
                iou = "" if r["iou"] is None else f"{100 * r['iou']:.2f}"
                w.writerow([r["class_id"], r["name"], iou, r["gt_pixels"], r["pred_pixels"], r["tp"]])
            w.writerow(["", "mIoU", f"{100 * miou:.2f}", cm.total, cm.total, int(cm.tp.sum())])
    return {"classes": rows, "miou": miou}
