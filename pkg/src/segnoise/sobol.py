"""Seg-Sobol: black-box total-order Sobol attribution for segmentation.

The image is perturbed by many smooth masks built from a coarse g x g grid of
quasi-random values. Each perturbed image is scored by the summed
target-class probability of the segmentation output, and the Jansen estimator
turns those scores into one total-order index per grid cell. The index grid
is upsampled to the image size and min-max normalized into a saliency map.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from scipy.stats import qmc

from .core.saliency import normalize_saliency
from .core.types import Image, SaliencyMap

BASELINES = ("blur", "zero", "mean")
DEGENERATE_VAR = 1e-12


@dataclass(frozen=True)
class SobolConfig:
    grid_size: int = 11
    n_designs: int = 2048
    seed: int = 0
    baseline: str = "blur"
    blur_sigma: float = 5.0
    batch_size: int = 256

    def __post_init__(self):
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        n = self.n_designs
        if n < 32 or n & (n - 1):
            raise ValueError(f"n_designs must be a power of two >= 32, got {n}")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")

    @property
    def n_inputs(self) -> int:
        return self.grid_size**2


@dataclass(frozen=True)
class SobolIndices:
    total_order: np.ndarray
    degenerate: bool = False


def upsample_bilinear(coarse, height: int, width: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes of ``coarse`` to (height, width)."""
    arr = np.asarray(coarse, dtype=np.float32)
    lead = arr.shape[:-2]
    t = torch.from_numpy(np.ascontiguousarray(arr.reshape(-1, 1, *arr.shape[-2:])))
    up = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return up.numpy().reshape(*lead, height, width)


@dataclass(frozen=True, eq=False)
class PerturbationMask:
    coarse: np.ndarray
    upsampled: np.ndarray

    @classmethod
    def from_coarse(cls, coarse, height: int, width: int) -> "PerturbationMask":
        coarse = np.asarray(coarse, dtype=np.float32)
        if coarse.min() < 0 or coarse.max() > 1:
            raise ValueError("mask values must lie in [0, 1]")
        return cls(coarse, np.clip(upsample_bilinear(coarse, height, width), 0.0, 1.0))


def design_matrices(d: int, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Two n x d quasi-random matrices in [0, 1) taken from one scrambled Sobol
    sequence of dimension 2d (first half of the columns is A, second half B)."""
    if n < 2 or n & (n - 1):
        raise ValueError(f"design size must be a power of two, got {n}")
    sampler = qmc.Sobol(d=2 * d, scramble=True, seed=seed)
    pts = sampler.random_base2(m=int(math.log2(n)))
    return pts[:, :d].copy(), pts[:, d:].copy()


def sample_design_matrices(cfg: SobolConfig) -> tuple[np.ndarray, np.ndarray]:
    return design_matrices(cfg.n_inputs, cfg.n_designs, cfg.seed)


def make_baseline(I: Image, kind: str = "blur", blur_sigma: float = 5.0) -> Image:
    px = I.pixels.astype(np.float64)
    if kind == "blur":
        out = ndimage.gaussian_filter(px, sigma=(blur_sigma, blur_sigma, 0), mode="reflect")
    elif kind == "zero":
        out = np.zeros_like(px)
    elif kind == "mean":
        out = np.broadcast_to(px.mean(axis=(0, 1), keepdims=True), px.shape)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return Image(np.clip(out, 0.0, 1.0))


def perturb(I: Image, m, baseline: Image) -> Image:
    """``m * I + (1 - m) * baseline``, the mask broadcast over channels."""
    mask = m.upsampled if isinstance(m, PerturbationMask) else np.asarray(m, dtype=np.float64)
    if mask.shape != I.hw or baseline.pixels.shape != I.pixels.shape:
        raise ValueError("image, mask and baseline dims must match")
    mask = mask.astype(np.float64)[..., None]
    out = mask * I.pixels + (1.0 - mask) * baseline.pixels
    return Image(np.clip(out, 0.0, 1.0))


def _region_weights(region, hw) -> np.ndarray | None:
    if region is None:
        return None
    r = np.asarray(region)
    if r.dtype != bool:
        idx = r.astype(int).reshape(-1, 2)
        r = np.zeros(hw, dtype=bool)
        r[idx[:, 0], idx[:, 1]] = True
    if r.shape != tuple(hw):
        raise ValueError(f"region dims {r.shape} do not match image dims {hw}")
    if not r.any():
        raise ValueError("score region is empty")
    return r


def seg_scores(model, images: np.ndarray, c: int, region=None) -> np.ndarray:
    """Summed class-``c`` probability over ``region`` for each image of a batch."""
    images = np.asarray(images)
    probs = model.predict_probs(images)
    if not 0 <= c < probs.shape[-1]:
        raise ValueError(f"class {c} out of range for {probs.shape[-1]} classes")
    pc = probs[..., c].astype(np.float64)
    r = _region_weights(region, images.shape[1:3])
    if r is not None:
        pc = pc * r
    return pc.sum(axis=(1, 2))


def seg_score(model, I: Image, c: int, region=None) -> float:
    """Summed class-``c`` probability of the model output, optionally only over
    ``region`` (boolean H x W mask or an array of (row, col) pairs)."""
    return float(seg_scores(model, I.pixels[None], c, region)[0])


def jansen_total_order(fA, fAB, shape=None) -> SobolIndices:
    """Jansen estimator of total-order indices.

    ``fAB[i]`` holds the outputs on matrix A with column ``i`` taken from B.
    ``ST_i = sum((fA - fAB_i)^2) / (2 N Var(fA))``.
    """
    fA = np.asarray(fA, dtype=np.float64)
    fAB = np.atleast_2d(np.asarray(fAB, dtype=np.float64))
    n = fA.shape[0]
    if fAB.shape[1] != n:
        raise ValueError(f"fAB must be d x N with N={n}, got {fAB.shape}")
    shape = shape or (fAB.shape[0],)
    var = fA.var(ddof=1)
    if not var > DEGENERATE_VAR:
        return SobolIndices(np.zeros(shape), degenerate=True)
    st = ((fA[None, :] - fAB) ** 2).sum(axis=1) / (2.0 * n * var)
    return SobolIndices(st.reshape(shape), degenerate=False)


def _score_designs(model, I, c, designs, baseline, cfg, region):
    g = cfg.grid_size
    h, w = I.hw
    x = torch.from_numpy(I.pixels.astype(np.float32))
    b = torch.from_numpy(baseline.pixels.astype(np.float32))
    out = np.empty(designs.shape[0])
    for s in range(0, designs.shape[0], cfg.batch_size):
        coarse = torch.from_numpy(designs[s:s + cfg.batch_size].astype(np.float32)).view(-1, 1, g, g)
        m = F.interpolate(coarse, size=(h, w), mode="bilinear", align_corners=False)
        m = m.clamp(0, 1).permute(0, 2, 3, 1)
        batch = (m * x + (1 - m) * b).clamp(0, 1).numpy()
        out[s:s + len(batch)] = seg_scores(model, batch, c, region)
    return out


def seg_sobol_explain(
    model,
    I: Image,
    c: int = 1,
    cfg: SobolConfig = SobolConfig(),
    *,
    region=None,
    dump_csv=None,
) -> SaliencyMap:
    """Seg-Sobol saliency map for class ``c``.

    The coarse index grid is kept in ``meta["total_order"]``; a zero-variance
    output sets ``meta["degenerate"]``. ``dump_csv`` writes every
    (design block, row, score, coarse mask) tuple for offline audits.
    """
    A, B = sample_design_matrices(cfg)
    d = cfg.n_inputs
    baseline = make_baseline(I, cfg.baseline, cfg.blur_sigma)
    fA = _score_designs(model, I, c, A, baseline, cfg, region)
    fAB = np.empty((d, cfg.n_designs))
    blocks = [A] if dump_csv else None
    for i in range(d):
        ABi = A.copy()
        ABi[:, i] = B[:, i]
        fAB[i] = _score_designs(model, I, c, ABi, baseline, cfg, region)
        if blocks is not None:
            blocks.append(ABi)
    if dump_csv:
        _dump_designs(dump_csv, blocks, [fA, *fAB])
    idx = jansen_total_order(fA, fAB, shape=(cfg.grid_size, cfg.grid_size))
    st = np.clip(idx.total_order, 0.0, 1.0)
    raw = upsample_bilinear(st, *I.hw).astype(np.float64)
    meta = {"degenerate": idx.degenerate, "total_order": idx.total_order, "grid_size": cfg.grid_size}
    return normalize_saliency(raw, target_class=c, method_id="seg_sobol", meta=meta)


def _dump_designs(path, blocks, scores) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = blocks[0].shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "row", "score", *[f"m{j}" for j in range(d)]])
        for bi, (rows, sc) in enumerate(zip(blocks, scores)):
            for ri in range(rows.shape[0]):
                w.writerow([bi, ri, repr(float(sc[ri])), *[repr(float(v)) for v in rows[ri]]])
