"""Glue between a trained model, the tiler and the metrics."""
from __future__ import annotations

from typing import Iterable

import numpy as np
import torch

from .datamodel import IGNORE_ID
from .metrics import ConfusionMatrix
from .model import SegModel, predict_probs
from .tiler import TileSpec, argmax_mask, pad_to_tile, tiled_inference


def tile_model(model: SegModel):
    """Wrap a model as an image -> probability-map callable for the tiler."""
    model.eval()

    def run(tile: np.ndarray) -> np.ndarray:
        return predict_probs(model, tile)

    return run


def predict(model: SegModel, image: np.ndarray, spec: TileSpec, workers: int = 1) -> np.ndarray:
    """Full-resolution class probabilities for an image of any size >= 1 pixel."""
    padded, (H, W) = pad_to_tile(image, spec.tile_size)
    with torch.no_grad():
        probs = tiled_inference(tile_model(model), padded, spec, workers=workers)
    return probs[:H, :W]


def evaluate(model: SegModel, scenes: Iterable[tuple[np.ndarray, np.ndarray]], spec: TileSpec,
             num_classes: int, ignore_id: int = IGNORE_ID, workers: int = 1) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes, ignore_id)
    for image, mask in scenes:
        cm.accumulate(argmax_mask(predict(model, image, spec, workers)), mask)
    return cm
