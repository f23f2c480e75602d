"""Raster/label conventions, class tables, dataset indexing and frequency statistics.

Images are ``float32`` arrays of shape ``(H, W, channels)`` with values in
``[0, 1]``. Label masks are ``uint8`` arrays of shape ``(H, W)`` holding class
ids or the ignore sentinel. Logit and probability maps are ``(H, W, C)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage

IGNORE_ID = 255

DEFAULT_CLASS_NAMES = (
    "Background",
    "Water",
    "Building-No-Damage",
    "Building-Minor-Damage",
    "Building-Major-Damage",
    "Building-Total-Destruction",
    "Road-Clear",
    "Road-Blocked",
    "Tree",
    "Pool",
    "Vehicle",
)
DEFAULT_RARE_SET = (3, 4, 5)

SPLITS = ("train", "val", "test")


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ClassTable:
    names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    rare_set: tuple[int, ...] = DEFAULT_RARE_SET
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "rare_set", tuple(sorted(set(int(r) for r in self.rare_set))))
        if not self.names:
            raise ValidationError("class table is empty")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("class names must be unique")
        if 0 <= self.ignore_id < len(self.names):
            raise ValidationError(f"ignore_id {self.ignore_id} collides with a class id")
        if not 0 <= self.ignore_id <= 255:
            raise ValidationError("ignore_id must fit in an 8-bit mask")
        bad = [r for r in self.rare_set if not 0 <= r < len(self.names)]
        if bad:
            raise ValidationError(f"rare_set ids {bad} are not class ids")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def classes(self) -> list[tuple[int, str]]:
        return list(enumerate(self.names))

    def to_dict(self) -> dict:
        return {
            "ignore_id": self.ignore_id,
            "classes": [
                {"id": i, "name": n, "rare": i in self.rare_set} for i, n in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassTable":
        entries = doc.get("classes")
        if entries is None:
            return cls(ignore_id=int(doc.get("ignore_id", IGNORE_ID)))
        ids = [int(e["id"]) for e in entries]
        if sorted(ids) != list(range(len(ids))):
            raise ValidationError("class ids must be unique and contiguous from 0")
        ordered = sorted(entries, key=lambda e: int(e["id"]))
        return cls(
            names=tuple(str(e["name"]) for e in ordered),
            rare_set=tuple(int(e["id"]) for e in ordered if e.get("rare", False)),
            ignore_id=int(doc.get("ignore_id", IGNORE_ID)),
        )


def validate_image(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3:
        raise ValidationError(f"image must be (H, W, channels), got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValidationError("image contains non-finite values")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValidationError("image values must lie in [0, 1]")
    return image


def validate_mask(mask: np.ndarray, table: ClassTable, image: np.ndarray | None = None) -> np.ndarray:
    if mask.ndim != 2:
        raise ValidationError(f"mask must be (H, W), got shape {mask.shape}")
    if image is not None and image.shape[:2] != mask.shape:
        raise ValidationError(f"image {image.shape[:2]} and mask {mask.shape} dimensions differ")
    bad = (mask >= table.num_classes) & (mask != table.ignore_id)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValidationError(f"invalid class id {int(mask[r, c])} at pixel (row={r}, col={c})")
    return mask


# --- raster I/O -------------------------------------------------------------


def read_image(path: str | Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float32) / 255.0


def write_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_mask(path: str | Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "P"):
                raise OSError(f"mask must be single-channel 8-bit, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    except OSError as exc:
        raise OSError(f"cannot read mask {path}: {exc}") from exc


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    PILImage.fromarray(np.asarray(mask, dtype=np.uint8), mode="L").save(path, format="PNG")


# --- dataset index ----------------------------------------------------------


@dataclass(frozen=True)
class DatasetIndex:
    pairs: tuple[tuple[Path, Path], ...]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def load(self, i: int, table: ClassTable | None = None) -> tuple[np.ndarray, np.ndarray]:
        img_path, mask_path = self.pairs[i]
        image, mask = read_image(img_path), read_mask(mask_path)
        if image.shape[:2] != mask.shape:
            raise ValidationError(
                f"{img_path.name}: image {image.shape[:2]} and mask {mask.shape} dimensions differ"
            )
        if table is not None:
            validate_mask(mask, table)
        return image, mask

    def masks(self) -> Iterable[tuple[Path, np.ndarray]]:
        for _, mask_path in self.pairs:
            yield mask_path, read_mask(mask_path)


def load_dataset(root_dir: str | Path, split: str = "train") -> DatasetIndex:
    """Index ``<root>/<split>/{images,masks}/<stem>.png`` pairs, sorted by stem."""
    base = Path(root_dir) / split
    img_dir, mask_dir = base / "images", base / "masks"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"missing image directory {img_dir}")
    if not mask_dir.is_dir():
        raise FileNotFoundError(f"missing mask directory {mask_dir}")
    images = {p.stem: p for p in img_dir.glob("*.png")}
    masks = {p.stem: p for p in mask_dir.glob("*.png")}
    unmatched = sorted(set(images) ^ set(masks))
    if unmatched:
        raise ValidationError(f"unmatched stems in {base}: {', '.join(unmatched)}")
    stems = sorted(images)
    return DatasetIndex(tuple((images[s], masks[s]) for s in stems), split=split)


# --- class frequencies ------------------------------------------------------


@dataclass(frozen=True)
class FrequencyTable:
    table: ClassTable
    counts: np.ndarray = field(repr=False)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def percentages(self) -> np.ndarray:
        total = self.total
        if total == 0:
            return np.zeros(len(self.counts))
        return 100.0 * self.counts / total

    def as_dict(self) -> dict[int, float]:
        return {i: float(p) for i, p in enumerate(self.percentages)}

    def rows(self) -> list[tuple[int, str, int, float]]:
        pct = self.percentages
        return [(i, n, int(self.counts[i]), float(pct[i])) for i, n in self.table.classes]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", "name", "pixel_count", "percent"])
            for i, n, cnt, pct in self.rows():
                w.writerow([i, n, cnt, f"{pct:.4f}"])


def count_labels(mask: np.ndarray, table: ClassTable) -> np.ndarray:
    validate_mask(mask, table)
    counts = np.bincount(mask.ravel(), minlength=256)
    return counts[: table.num_classes].astype(np.int64)


def frequencies_from_masks(masks: Iterable[np.ndarray], table: ClassTable) -> FrequencyTable:
    counts = np.zeros(table.num_classes, dtype=np.int64)
    for m in masks:
        counts += count_labels(m, table)
    return FrequencyTable(table, counts)


def compute_class_frequencies(index: DatasetIndex | Sequence[np.ndarray], table: ClassTable) -> FrequencyTable:
    """Pixel counts per class over a split; ignore pixels are excluded."""
    if isinstance(index, DatasetIndex):
        counts = np.zeros(table.num_classes, dtype=np.int64)
        for path, mask in index.masks():
            try:
                counts += count_labels(mask, table)
            except ValidationError as exc:
                raise ValidationError(f"{path}: {exc}") from exc
        return FrequencyTable(table, counts)
    return frequencies_from_masks(index, table)
