"""Synthetic shapes segmentation task.

Each image holds one to three non-overlapping filled disks or squares drawn
over a smooth textured background. With two classes every shape is
foreground (label 1); with three classes disks are label 1 and squares
label 2.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .types import Image, SegMask

SPLITS = ("train", "val", "test")
_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}
_PLACEMENT_RETRIES = 50
_ITEM_RETRIES = 20


@dataclass(frozen=True, eq=False)
class Dataset:
    items: tuple[tuple[Image, SegMask], ...]
    split: str
    seed: int
    size: int
    num_classes: int

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx):
        return self.items[idx]

    def images_array(self) -> np.ndarray:
        return np.stack([img.pixels for img, _ in self.items])

    def labels_array(self) -> np.ndarray:
        return np.stack([m.labels for _, m in self.items])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.split}:{self.seed}:{self.size}:{self.num_classes}".encode())
        for img, mask in self.items:
            h.update(img.pixels.tobytes())
            h.update(mask.labels.tobytes())
        return h.hexdigest()


def _background(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    base = rng.uniform(0.3, 0.55)
    tint = rng.uniform(-0.04, 0.04, size=channels)
    coarse = ndimage.gaussian_filter(rng.standard_normal((size, size, channels)), sigma=(4, 4, 0))
    coarse /= coarse.std() + 1e-12
    fine = rng.standard_normal((size, size, channels))
    return base + tint + 0.06 * coarse + 0.03 * fine


def _shape_color(rng: np.random.Generator, bg_mean: np.ndarray) -> np.ndarray:
    while True:
        col = rng.uniform(0.0, 1.0, size=bg_mean.shape)
        if np.abs(col - bg_mean).max() >= 0.3:
            return col


def _shape_mask(kind: str, cy: float, cx: float, r: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    half = r * 0.886  # equal-area square
    return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)


def _place_shapes(rng, size, n_shapes, kinds, radius_scale):
    occupied = np.zeros((size, size), dtype=bool)
    placed = []
    for _ in range(n_shapes):
        for _attempt in range(_PLACEMENT_RETRIES):
            kind = kinds[rng.integers(len(kinds))]
            r = rng.uniform(0.09, 0.18) * size * radius_scale
            cy, cx = rng.uniform(r + 1, size - r - 1, size=2)
            m = _shape_mask(kind, cy, cx, r, size)
            if not (ndimage.binary_dilation(m, iterations=2) & occupied).any():
                occupied |= m
                placed.append((kind, m))
                break
        else:
            return None
    return placed


def make_item(
    rng: np.random.Generator,
    size: int,
    num_classes: int,
    channels: int = 3,
    shapes_range: tuple[int, int] = (1, 3),
    kinds: Sequence[str] = ("disk", "square"),
    fg_fraction: tuple[float, float] = (0.05, 0.5),
) -> tuple[Image, SegMask]:
    """Draw one (image, mask) pair; geometry is redrawn smaller on failure."""
    radius_scale = 1.0
    for _ in range(_ITEM_RETRIES):
        n_shapes = int(rng.integers(shapes_range[0], shapes_range[1] + 1))
        placed = _place_shapes(rng, size, n_shapes, kinds, radius_scale)
        if placed is None:
            radius_scale *= 0.9
            continue
        fg = np.zeros((size, size), dtype=bool)
        for _, m in placed:
            fg |= m
        frac = fg.mean()
        if not fg_fraction[0] <= frac <= fg_fraction[1]:
            continue
        img = _background(rng, size, channels)
        labels = np.zeros((size, size), dtype=np.int64)
        bg_mean = img.reshape(-1, channels).mean(axis=0)
        for kind, m in placed:
            col = _shape_color(rng, bg_mean)
            tex = 0.03 * rng.standard_normal((size, size, channels))
            img[m] = (col + tex)[m]
            if num_classes == 2:
                labels[m] = 1
            else:
                labels[m] = 1 if kind == "disk" else 2
        img = np.clip(img, 0.0, 1.0)
        return Image(img), SegMask(labels, num_classes)
    raise RuntimeError("could not generate a valid shapes item")


def gen_shapes_dataset(
    seed: int,
    n: int,
    size: int = 64,
    K: int = 2,
    *,
    split: str = "train",
    channels: int = 3,
    shapes_range: tuple[int, int] = (1, 3),
    kinds: Sequence[str] = ("disk", "square"),
) -> Dataset:
    """Generate ``n`` synthetic items; a pure function of its arguments.

    Each item is drawn from its own child seed, so item ``i`` does not depend
    on ``n``. Splits use distinct seed streams.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    if K not in (2, 3):
        raise ValueError("K must be 2 or 3")
    if split not in _SPLIT_CODES:
        raise ValueError(f"split must be one of {SPLITS}")
    if not 1 <= shapes_range[0] <= shapes_range[1] <= 3:
        raise ValueError("shapes_range must lie within [1, 3]")
    root = np.random.SeedSequence([seed, _SPLIT_CODES[split]])
    items = []
    for child in root.spawn(n):
        rng = np.random.default_rng(child)
        items.append(make_item(rng, size, K, channels, shapes_range, tuple(kinds)))
    return Dataset(tuple(items), split=split, seed=seed, size=size, num_classes=K)


def export_png_pairs(dataset: Dataset, out_dir, prefix: str = "item") -> list[Path]:
    from .io import save_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (img, mask) in enumerate(dataset.items):
        ip = out_dir / f"{prefix}_{i:04d}_image.png"
        mp = out_dir / f"{prefix}_{i:04d}_mask.png"
        save_png(ip, img.pixels)
        save_png(mp, mask.labels / max(mask.num_classes - 1, 1))
        written += [ip, mp]
    return written
