"""Explainer registry: the three benchmarked methods plus reference explainers.

Every explainer is a callable ``(image, target_class, seg_mask) -> SaliencyMap``.
The reference explainers (``ground_truth``, ``inverted``, ``random``) give the
evaluation itself a sanity axis: a faithful map, its complement, and a smooth
map with no relation to the image.
"""

from __future__ import annotations

import zlib
from functools import partial

import numpy as np
from scipy import ndimage

from .core.saliency import normalize_saliency
from .core.types import Image, SaliencyMap, SegMask
from .gradcam import LayerSelector, seg_grad_cam, seg_grad_cam_pp
from .sobol import SobolConfig, seg_sobol_explain, upsample_bilinear

EXPLAINERS = ("seg_sobol", "seg_grad_cam", "seg_grad_cam_pp", "ground_truth", "inverted", "random")
SALIENCY_METHODS = ("seg_sobol", "seg_grad_cam", "seg_grad_cam_pp")
NEEDS_LABELS = frozenset({"ground_truth", "inverted"})


def ground_truth_saliency(seg: SegMask, c: int = 1, dilation: int = 4) -> SaliencyMap:
    if seg is None:
        raise ValueError("ground_truth explainer needs a segmentation mask")
    fg = seg.labels == c
    if dilation > 0:
        fg = ndimage.binary_dilation(fg, structure=ndimage.generate_binary_structure(2, 1), iterations=dilation)
    return normalize_saliency(fg.astype(np.float64), target_class=c, method_id="ground_truth")


def ground_truth(image: Image, c: int, seg: SegMask, dilation: int = 4) -> SaliencyMap:
    return ground_truth_saliency(seg, c, dilation)


def inverted(image: Image, c: int, seg: SegMask, dilation: int = 4) -> SaliencyMap:
    gt = ground_truth_saliency(seg, c, dilation)
    return SaliencyMap(1.0 - gt.values, target_class=c, method_id="inverted")


def random_saliency(image: Image, c: int, seg=None, seed: int = 0, grid: int = 8) -> SaliencyMap:
    """Smooth random field; the draw depends only on ``seed`` and the image bytes."""
    rng = np.random.default_rng([seed, zlib.crc32(image.pixels.tobytes())])
    field = upsample_bilinear(rng.uniform(size=(grid, grid)), *image.hw)
    return normalize_saliency(field, target_class=c, method_id="random")


def build_explainer(name: str, utility=None, **params):
    """Return a configured explainer callable for ``name``."""
    if name == "ground_truth":
        fn = partial(ground_truth, dilation=int(params.get("dilation", 4)))
    elif name == "inverted":
        fn = partial(inverted, dilation=int(params.get("dilation", 4)))
    elif name == "random":
        fn = partial(random_saliency, seed=int(params.get("seed", 0)), grid=int(params.get("grid", 8)))
    elif name == "seg_sobol":
        cfg = SobolConfig(**params)

        def fn(image, c, seg=None):
            return seg_sobol_explain(utility, image, c, cfg)
    elif name in ("seg_grad_cam", "seg_grad_cam_pp"):
        sel = LayerSelector(params.get("layer_id", "enc3"))
        method = seg_grad_cam if name == "seg_grad_cam" else seg_grad_cam_pp

        def fn(image, c, seg=None):
            return method(utility, image, c, sel)
    else:
        raise KeyError(f"unknown explainer {name!r}; expected one of {EXPLAINERS}")
    fn.method_id = name
    return fn
