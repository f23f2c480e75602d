"""Seeded synthetic aerial-like scenes with a heavily imbalanced label distribution.

Each class gets a base colour plus a class-specific amount of per-pixel noise,
on top of a smooth illumination field shared by all classes. Damage classes
share the roof colour of undamaged buildings and mostly differ in their noise
level, so a coarse (downsampled) view loses most of the evidence separating
them. Damage patches are painted as small blobs inside building footprints.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .datamodel import ClassTable, ValidationError, write_image, write_mask

# Reference label shares; No-Damage, Road-Clear and Vehicle have no published
# share and split the remaining 9.91%.
DEFAULT_FREQUENCIES = (
    0.5251,  # Background
    0.0813,  # Water
    0.0500,  # Building-No-Damage
    0.0263,  # Building-Minor-Damage
    0.0168,  # Building-Major-Damage
    0.0144,  # Building-Total-Destruction
    0.0450,  # Road-Clear
    0.0159,  # Road-Blocked
    0.2205,  # Tree
    0.0006,  # Pool
    0.0041,  # Vehicle
)


@dataclass(frozen=True)
class ClassTexture:
    color: tuple[float, float, float]
    noise: float
    blob_size: tuple[int, int]  # radius / half-width range in pixels
    shape: str = "ellipse"  # ellipse | rect | band
    host: int | None = None  # class whose pixels this class is painted into; None = canvas


DEFAULT_TEXTURES = (
    ClassTexture((0.55, 0.50, 0.40), 0.04, (0, 0)),
    ClassTexture((0.15, 0.30, 0.50), 0.02, (8, 20)),
    ClassTexture((0.72, 0.45, 0.35), 0.02, (5, 10), "rect"),
    ClassTexture((0.50, 0.52, 0.70), 0.08, (2, 4), host=2),
    ClassTexture((0.60, 0.40, 0.32), 0.16, (2, 4), host=2),
    ClassTexture((0.45, 0.36, 0.30), 0.26, (2, 4), host=2),
    ClassTexture((0.35, 0.35, 0.35), 0.03, (2, 3), "band"),
    ClassTexture((0.45, 0.40, 0.30), 0.15, (2, 4), host=6),
    ClassTexture((0.20, 0.45, 0.20), 0.08, (4, 12)),
    ClassTexture((0.30, 0.70, 0.85), 0.02, (1, 3)),
    ClassTexture((0.88, 0.88, 0.92), 0.03, (1, 2), "rect", host=6),
)

# canvas first, then large regions, then hosted detail
DEFAULT_PAINT_ORDER = (0, 1, 6, 2, 8, 3, 4, 5, 7, 10, 9)


@dataclass(frozen=True)
class SynthSpec:
    height: int = 128
    width: int = 128
    frequencies: tuple[float, ...] = DEFAULT_FREQUENCIES
    textures: tuple[ClassTexture, ...] = DEFAULT_TEXTURES
    paint_order: tuple[int, ...] | None = DEFAULT_PAINT_ORDER
    illumination: float = 0.05
    max_attempts: int = 400

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=np.float64)
        if len(self.textures) != len(freqs):
            raise ValidationError("textures and frequencies must have one entry per class")
        if np.any(freqs < 0):
            raise ValidationError("class frequencies must be non-negative")
        if abs(freqs.sum() - 1.0) > 1e-3:
            raise ValidationError(f"class frequencies sum to {freqs.sum():.6f}, expected 1")
        if self.height < 1 or self.width < 1:
            raise ValidationError("scene size must be positive")
        for t in self.textures:
            if t.shape not in ("ellipse", "rect", "band"):
                raise ValidationError(f"unknown blob shape {t.shape!r}")
            if t.host is not None and not 0 <= t.host < len(freqs):
                raise ValidationError(f"host class {t.host} out of range")
        if self.paint_order is not None and sorted(self.paint_order) != list(range(len(freqs))):
            raise ValidationError("paint_order must be a permutation of class ids")

    @property
    def num_classes(self) -> int:
        return len(self.frequencies)

    @classmethod
    def uniform_class(cls, num_classes: int, cls_id: int, **kw) -> "SynthSpec":
        freqs = [0.0] * num_classes
        freqs[cls_id] = 1.0
        textures = tuple(
            DEFAULT_TEXTURES[i] if i < len(DEFAULT_TEXTURES) else ClassTexture((0.5, 0.5, 0.5), 0.05, (2, 4))
            for i in range(num_classes)
        )
        textures = tuple(ClassTexture(t.color, t.noise, t.blob_size, t.shape) for t in textures)
        return cls(frequencies=tuple(freqs), textures=textures, paint_order=None, **kw)


def _blob(shape: str, center, size, hw, rng) -> tuple[slice, slice, np.ndarray]:
    """Footprint of one blob as (row slice, col slice, boolean patch)."""
    H, W = hw
    r0, c0 = center
    lo, hi = size
    if shape == "band":
        half = int(rng.integers(lo, hi + 1))
        if rng.random() < 0.5:
            rs = slice(max(r0 - half, 0), min(r0 + half + 1, H))
            cs = slice(0, W)
        else:
            rs = slice(0, H)
            cs = slice(max(c0 - half, 0), min(c0 + half + 1, W))
        return rs, cs, np.ones((rs.stop - rs.start, cs.stop - cs.start), dtype=bool)
    ry, rx = (int(v) for v in rng.integers(lo, hi + 1, size=2))
    rs = slice(max(r0 - ry, 0), min(r0 + ry + 1, H))
    cs = slice(max(c0 - rx, 0), min(c0 + rx + 1, W))
    if shape == "rect":
        return rs, cs, np.ones((rs.stop - rs.start, cs.stop - cs.start), dtype=bool)
    yy, xx = np.ogrid[rs, cs]
    inside = ((yy - r0) / (ry + 0.5)) ** 2 + ((xx - c0) / (rx + 0.5)) ** 2 <= 1.0
    return rs, cs, inside


def _layout(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = spec.height, spec.width
    freqs = np.asarray(spec.frequencies, dtype=np.float64)
    canvas = int(np.argmax(freqs))
    mask = np.full((H, W), canvas, dtype=np.uint8)

    # a host region must also hold the pixels its guests will carve out
    target = freqs.copy()
    for c, tex in enumerate(spec.textures):
        if tex.host is not None and c != canvas:
            target[tex.host] += freqs[c]

    order = spec.paint_order if spec.paint_order is not None else tuple(range(spec.num_classes))
    area = H * W
    for c in order:
        if c == canvas or freqs[c] == 0.0:
            continue
        tex = spec.textures[c]
        host = canvas if tex.host is None else tex.host
        want = target[c] * area
        # stochastic rounding keeps tiny classes unbiased across scenes
        want = np.floor(want) + (rng.random() < want - np.floor(want))
        have = 0
        for _ in range(spec.max_attempts):
            if have >= want:
                break
            eligible = mask == host
            flat = np.flatnonzero(eligible)
            if flat.size == 0:
                break
            p = int(flat[rng.integers(flat.size)])
            rs, cs, inside = _blob(tex.shape, divmod(p, W), tex.blob_size, (H, W), rng)
            paint = inside & eligible[rs, cs]
            n = int(paint.sum())
            if have + n / 2.0 > want:
                break
            mask[rs, cs][paint] = c
            have += n
    return mask


def _render(mask: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = mask.shape
    colors = np.array([t.color for t in spec.textures], dtype=np.float64)
    noise = np.array([t.noise for t in spec.textures], dtype=np.float64)
    light = gaussian_filter(rng.standard_normal((H, W)), sigma=max(H, W) / 8.0, mode="wrap")
    light *= spec.illumination / max(light.std(), 1e-12)
    grain = rng.standard_normal((H, W, 3))
    image = colors[mask] + light[..., None] + noise[mask][..., None] * grain
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_synthetic_scene(seed: int, spec: SynthSpec = SynthSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic ``(image, mask)`` pair for ``seed``."""
    rng = np.random.default_rng(seed)
    mask = _layout(spec, rng)
    return _render(mask, spec, rng), mask


def write_synthetic_split(
    out_dir: str | Path, count: int, seed: int, split: str = "train", spec: SynthSpec = SynthSpec()
) -> list[str]:
    """Write ``count`` scenes to ``<out_dir>/<split>/{images,masks}``; returns stems."""
    base = Path(out_dir) / split
    (base / "images").mkdir(parents=True, exist_ok=True)
    (base / "masks").mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(count - 1)))
    stems = []
    for i in range(count):
        stem = f"scene_{i:0{width}d}"
        image, mask = generate_synthetic_scene(scene_seed(seed, split, i), spec)
        write_image(base / "images" / f"{stem}.png", image)
        write_mask(base / "masks" / f"{stem}.png", mask)
        stems.append(stem)
    return stems


def scene_seed(seed: int, split: str, i: int) -> int:
    offset = {"train": 0, "val": 1, "test": 2}.get(split, 3)
    return int(np.random.SeedSequence([seed, offset, i]).generate_state(1)[0])


def default_table_for(spec: SynthSpec) -> ClassTable:
    if spec.num_classes == len(DEFAULT_FREQUENCIES):
        return ClassTable()
    return ClassTable(names=tuple(f"class_{i}" for i in range(spec.num_classes)), rare_set=())
