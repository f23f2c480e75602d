"""Class-aware crop sampling and flip/rotate/photometric augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import IGNORE_ID, DEFAULT_RARE_SET, ValidationError


@dataclass(frozen=True)
class SamplePolicy:
    crop_size: int = 128
    rare_fraction: float = 0.5
    rare_set: tuple[int, ...] = DEFAULT_RARE_SET
    center_jitter: int | None = None  # None -> crop_size // 4
    per_class_uniform: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rare_fraction <= 1.0:
            raise ValidationError(f"rare_fraction must be in [0, 1], got {self.rare_fraction}")
        if self.crop_size < 1:
            raise ValidationError("crop_size must be positive")
        if self.center_jitter is not None and self.center_jitter < 0:
            raise ValidationError("center_jitter must be non-negative")

    @property
    def jitter(self) -> int:
        return self.crop_size // 4 if self.center_jitter is None else self.center_jitter


@dataclass(frozen=True)
class AugConfig:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotate_prob: float = 0.5  # chance of a random multiple of 90 degrees
    photometric_prob: float = 0.5
    brightness: float = 0.1
    contrast: float = 0.1
    hue: float = 0.03  # fraction of a full turn

    def __post_init__(self):
        for name in ("hflip_prob", "vflip_prob", "rotate_prob", "photometric_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        for name in ("brightness", "contrast", "hue"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")

    @classmethod
    def identity(cls) -> "AugConfig":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass
class Crop:
    image: np.ndarray
    mask: np.ndarray
    origin: tuple[int, int]  # in padded coordinates
    rare_centered: bool
    center: tuple[int, int] | None = None
    padding: tuple[int, int] = (0, 0)  # rows, cols appended at bottom/right


def find_rare_class_pixels(mask: np.ndarray, rare_set) -> np.ndarray:
    """(row, col) coordinates of rare-class pixels in raster order, shape (n, 2)."""
    hit = np.isin(mask, np.asarray(list(rare_set), dtype=mask.dtype))
    return np.argwhere(hit)


def _pad_to(image, mask, size, ignore_id):
    H, W = mask.shape
    ph, pw = max(size - H, 0), max(size - W, 0)
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)), constant_values=0.0)
        mask = np.pad(mask, ((0, ph), (0, pw)), constant_values=ignore_id)
    return image, mask, (ph, pw)


def sample_crop(
    image: np.ndarray,
    mask: np.ndarray,
    policy: SamplePolicy,
    rng: np.random.Generator,
    ignore_id: int = IGNORE_ID,
) -> Crop:
    """Draw one ``crop_size`` square window.

    With probability ``rare_fraction`` the window is centred on a random
    rare-class pixel (plus uniform jitter, clamped to stay in bounds);
    otherwise, or when the mask has no rare pixels, the window position is
    uniform. Undersized inputs are padded (image 0, mask ``ignore_id``).
    """
    if image.shape[:2] != mask.shape:
        raise ValidationError(f"image {image.shape[:2]} and mask {mask.shape} dimensions differ")
    size = policy.crop_size
    image, mask, padding = _pad_to(image, mask, size, ignore_id)
    H, W = mask.shape

    use_rare = rng.random() < policy.rare_fraction
    center = None
    if use_rare:
        coords = find_rare_class_pixels(mask, policy.rare_set)
        if len(coords) == 0:
            use_rare = False
        else:
            if policy.per_class_uniform:
                present = np.unique(mask[coords[:, 0], coords[:, 1]])
                cls = present[rng.integers(len(present))]
                coords = coords[mask[coords[:, 0], coords[:, 1]] == cls]
            center = tuple(int(v) for v in coords[rng.integers(len(coords))])
            j = policy.jitter
            if j:
                dr, dc = rng.integers(-j, j + 1, size=2)
            else:
                dr = dc = 0
            top = min(max(center[0] + int(dr) - size // 2, 0), H - size)
            left = min(max(center[1] + int(dc) - size // 2, 0), W - size)
    if not use_rare:
        top = int(rng.integers(0, H - size + 1))
        left = int(rng.integers(0, W - size + 1))

    win = (slice(top, top + size), slice(left, left + size))
    return Crop(image[win].copy(), mask[win].copy(), (top, left), use_rare, center, padding)


def _rgb_hue_rotate(image: np.ndarray, turn: float) -> np.ndarray:
    # rotation about the grey axis
    theta = 2.0 * np.pi * turn
    c, s = np.cos(theta), np.sin(theta)
    k = 1.0 / 3.0
    sq = np.sqrt(k)
    rot = np.array(
        [
            [c + (1 - c) * k, k * (1 - c) - sq * s, k * (1 - c) + sq * s],
            [k * (1 - c) + sq * s, c + (1 - c) * k, k * (1 - c) - sq * s],
            [k * (1 - c) - sq * s, k * (1 - c) + sq * s, c + (1 - c) * k],
        ]
    )
    return image @ rot.T.astype(image.dtype)


def augment(
    image: np.ndarray, mask: np.ndarray, cfg: AugConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same flips/rotation to image and mask; photometric jitter to the image only."""
    if rng.random() < cfg.hflip_prob:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if rng.random() < cfg.vflip_prob:
        image, mask = image[::-1], mask[::-1]
    if rng.random() < cfg.rotate_prob:
        if mask.shape[0] != mask.shape[1]:
            raise ValidationError("90-degree rotations need a square crop")
        k = int(rng.integers(1, 4))
        image, mask = np.rot90(image, k, axes=(0, 1)), np.rot90(mask, k, axes=(0, 1))
    image = np.ascontiguousarray(image)
    mask = np.ascontiguousarray(mask)
    if rng.random() < cfg.photometric_prob:
        b = rng.uniform(-cfg.brightness, cfg.brightness)
        ctr = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast)
        h = rng.uniform(-cfg.hue, cfg.hue)
        mean = image.mean(axis=(0, 1), keepdims=True)
        out = (image - mean) * ctr + mean + b
        if h:
            out = _rgb_hue_rotate(out, h)
        image = np.clip(out, 0.0, 1.0).astype(np.float32)
    return image, mask
