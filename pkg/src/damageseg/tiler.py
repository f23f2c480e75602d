"""Sliding-window inference at native resolution with uniform overlap averaging."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

# A tile model maps a (tile, tile, channels) image to (tile, tile, C) probabilities.
TileModel = Callable[[np.ndarray], np.ndarray]


class TilingError(ValueError):
    pass


@dataclass(frozen=True)
class TileSpec:
    tile_size: int = 1024
    stride: int = 768

    def __post_init__(self):
        if self.tile_size <= 0 or not 0 < self.stride <= self.tile_size:
            raise TilingError(f"need 0 < stride <= tile_size, got stride={self.stride}, tile={self.tile_size}")
        if self.tile_size % 32:
            raise TilingError(f"tile_size {self.tile_size} must be divisible by 32")


def axis_origins(length: int, tile: int, stride: int) -> list[int]:
    if length < tile:
        raise TilingError(f"dimension {length} is smaller than tile size {tile}; pad first")
    origins = list(range(0, length - tile + 1, stride))
    if origins[-1] + tile < length:
        origins.append(length - tile)
    return origins


@dataclass(frozen=True)
class TileGrid:
    height: int
    width: int
    tile_size: int
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]

    @property
    def origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self) -> int:
        return len(self.row_origins) * len(self.col_origins)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_origins), len(self.col_origins)

    def overlap_counts(self) -> np.ndarray:
        # separable: count(r, c) = rows covering r * cols covering c
        t = self.tile_size
        rows = np.zeros(self.height, dtype=np.int32)
        cols = np.zeros(self.width, dtype=np.int32)
        for r in self.row_origins:
            rows[r : r + t] += 1
        for c in self.col_origins:
            cols[c : c + t] += 1
        return rows[:, None] * cols[None, :]


def plan_tiles(height: int, width: int, spec: TileSpec = TileSpec()) -> TileGrid:
    """Origins 0, S, 2S, ... per axis plus one window clamped to the far edge if needed."""
    rows = axis_origins(height, spec.tile_size, spec.stride)
    cols = axis_origins(width, spec.tile_size, spec.stride)
    return TileGrid(height, width, spec.tile_size, tuple(rows), tuple(cols))


def tiled_inference(
    model: TileModel,
    image: np.ndarray,
    spec: TileSpec = TileSpec(),
    workers: int = 1,
    dtype=np.float32,
) -> np.ndarray:
    """Average per-tile probability maps over every window covering each pixel.

    Tiles may be evaluated concurrently, but they are always merged in
    ascending tile order so the result does not depend on ``workers``.
    """
    H, W = image.shape[:2]
    grid = plan_tiles(H, W, spec)
    t = spec.tile_size
    origins = grid.origins

    def run(origin):
        r, c = origin
        out = np.asarray(model(image[r : r + t, c : c + t]))
        if out.ndim != 3 or out.shape[:2] != (t, t):
            raise TilingError(f"model returned shape {out.shape} for a {t}x{t} tile")
        return out

    total = None
    count = np.zeros((H, W), dtype=np.int32)

    def merge(origin, out):
        nonlocal total
        if total is None:
            total = np.zeros((H, W, out.shape[2]), dtype=dtype)
        elif out.shape[2] != total.shape[2]:
            raise TilingError(f"tile class count {out.shape[2]} differs from {total.shape[2]}")
        r, c = origin
        total[r : r + t, c : c + t] += out
        count[r : r + t, c : c + t] += 1

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for origin, out in zip(origins, pool.map(run, origins)):
                merge(origin, out)
    else:
        for origin in origins:
            merge(origin, run(origin))

    total /= count[..., None]
    return total


def argmax_mask(probs: np.ndarray) -> np.ndarray:
    """Per-pixel argmax (lowest class id wins ties) as a uint8 label mask."""
    return np.argmax(probs, axis=-1).astype(np.uint8)


def pad_to_tile(image: np.ndarray, tile: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pad bottom/right so both sides are at least ``tile``."""
    H, W = image.shape[:2]
    ph, pw = max(tile - H, 0), max(tile - W, 0)
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)))
    return image, (H, W)
