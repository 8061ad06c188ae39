"""Immutable array-backed domain types shared by every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

MIN_SIDE = 16


def _frozen(arr: np.ndarray, dtype=np.float32) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_unit_range(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ValueError(
            f"{what} must lie in [0, 1], got [{values.min():.4g}, {values.max():.4g}]"
        )


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x C raster with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[..., None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"Image expects H x W x C with C in {{1, 3}}, got {px.shape}")
        if px.shape[0] < MIN_SIDE or px.shape[1] < MIN_SIDE:
            raise ValueError(f"Image must be at least {MIN_SIDE}x{MIN_SIDE}, got {px.shape[:2]}")
        px = _frozen(px)
        _check_unit_range(px, "Image")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def hw(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Per-pixel importance in [0, 1] for one target class.

    ``meta`` carries explainer diagnostics such as the ``degenerate`` flag raised
    when an explainer saw no signal (constant output, zero gradients).
    """

    values: np.ndarray
    target_class: int = 1
    method_id: str = "unknown"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"SaliencyMap expects a 2-D array, got shape {v.shape}")
        v = _frozen(v)
        _check_unit_range(v, "SaliencyMap")
        object.__setattr__(self, "values", v)

    @property
    def degenerate(self) -> bool:
        return bool(self.meta.get("degenerate", False))

    def check_matches(self, image: Image) -> None:
        if self.values.shape != image.hw:
            raise ValueError(
                f"saliency dims {self.values.shape} do not match image dims {image.hw}"
            )


@dataclass(frozen=True, eq=False)
class SegMask:
    """Integer label raster with ``num_classes`` classes."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("SegMask needs at least 2 classes")
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError(f"SegMask expects a 2-D array, got shape {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise ValueError("SegMask labels out of range")
        object.__setattr__(self, "labels", _frozen(lab, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ProbMask:
    """H x W x K per-pixel class probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs)
        if p.ndim != 3:
            raise ValueError(f"ProbMask expects H x W x K, got {p.shape}")
        p = _frozen(p)
        _check_unit_range(p, "ProbMask")
        if not np.allclose(p.sum(axis=2), 1.0, atol=1e-5):
            raise ValueError("ProbMask rows must sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    def argmax(self) -> np.ndarray:
        return self.probs.argmax(axis=2)


@dataclass(frozen=True, eq=False)
class ExplanationMap:
    """Image combined with a saliency map by one integration technique."""

    pixels: np.ndarray
    technique: str
    source_method: str = "unknown"

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3:
            raise ValueError(f"ExplanationMap expects H x W x C, got {px.shape}")
        px = _frozen(px)
        _check_unit_range(px, "ExplanationMap")
        object.__setattr__(self, "pixels", px)

    @property
    def hw(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def as_image(self) -> Image:
        return Image(self.pixels)


@dataclass(frozen=True, eq=False)
class NoiseMask:
    """Per-pixel noise magnitude in [0, 1] emitted by the noise model."""

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"NoiseMask expects a 2-D array, got shape {v.shape}")
        v = _frozen(v, dtype=np.float64)
        _check_unit_range(v, "NoiseMask")
        object.__setattr__(self, "values", v)
