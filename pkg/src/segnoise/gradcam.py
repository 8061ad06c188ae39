"""Seg-Grad-CAM and Seg-Grad-CAM++ for the white-box utility model.

The explained score is the sum of class-``c`` logits over a pixel region,
by default the pixels the model itself assigns to ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .core.model import SegModel, to_tensor
from .core.saliency import normalize_saliency
from .core.types import Image, SaliencyMap


@dataclass(frozen=True)
class LayerSelector:
    layer_id: str = "enc3"


def default_region(model: SegModel, I: Image, c: int) -> np.ndarray:
    """Pixels predicted as ``c``; all pixels when that set is empty."""
    pred = model.predict_probs(I.pixels[None])[0].argmax(-1) == c
    return pred if pred.any() else np.ones(I.hw, dtype=bool)


def _activations_and_grads(model, I, c, sel, region, scale):
    if not 0 <= c < model.num_classes:
        raise ValueError(f"class {c} out of range for {model.num_classes} classes")
    layer = model.layer(sel.layer_id)
    store = {}
    handle = layer.register_forward_hook(lambda _m, _i, out: store.__setitem__("a", out))
    try:
        x = to_tensor(I.pixels).requires_grad_(True)
        with torch.enable_grad():
            logits = model.logits(x)
    finally:
        handle.remove()
    if "a" not in store:
        raise RuntimeError(f"layer {sel.layer_id!r} was not reached in the forward pass")
    act = store["a"]
    if act.dim() != 4:
        raise ValueError(f"layer {sel.layer_id!r} must yield a 4-D activation, got {tuple(act.shape)}")
    if region is None:
        region = default_region(model, I, c)
    r = torch.from_numpy(np.asarray(region, dtype=np.float32))
    y = scale * (logits[0, c] * r).sum()
    (grad,) = torch.autograd.grad(y, act, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(act)
    return act.detach()[0].double(), grad.detach()[0].double()


def _finish(cam, grad, I, c, method_id):
    degenerate = bool(torch.all(grad == 0))
    cam = F.relu(cam)
    up = F.interpolate(cam[None, None], size=I.hw, mode="bilinear", align_corners=False)[0, 0]
    raw = up.clamp_min(0).numpy()
    meta = {"degenerate": degenerate, "cam": cam.numpy()}
    if degenerate:
        raw = np.zeros_like(raw)
    return normalize_saliency(raw, target_class=c, method_id=method_id, meta=meta)


def seg_grad_cam(
    model: SegModel,
    I: Image,
    c: int = 1,
    sel: LayerSelector = LayerSelector(),
    region=None,
    *,
    scale: float = 1.0,
) -> SaliencyMap:
    """ReLU of the activation maps weighted by their spatially averaged gradients."""
    act, grad = _activations_and_grads(model, I, c, sel, region, scale)
    weights = grad.mean(dim=(1, 2))
    cam = (weights[:, None, None] * act).sum(dim=0)
    return _finish(cam, grad, I, c, "seg_grad_cam")


def seg_grad_cam_pp(
    model: SegModel,
    I: Image,
    c: int = 1,
    sel: LayerSelector = LayerSelector(),
    region=None,
    *,
    scale: float = 1.0,
) -> SaliencyMap:
    """Grad-CAM++ weighting.

    Higher derivatives come from the exponential-of-score closed form, under
    which they reduce to powers of the first gradient:
    ``alpha = g^2 / (2 g^2 + sum(A) g^3)``, zero where the denominator is.
    """
    act, grad = _activations_and_grads(model, I, c, sel, region, scale)
    g2 = grad**2
    g3 = g2 * grad
    denom = 2.0 * g2 + act.sum(dim=(1, 2), keepdim=True) * g3
    alpha = torch.where(denom != 0, g2 / torch.where(denom != 0, denom, torch.ones_like(denom)), torch.zeros_like(denom))
    weights = (alpha * F.relu(grad)).sum(dim=(1, 2))
    cam = (weights[:, None, None] * act).sum(dim=0)
    return _finish(cam, grad, I, c, "seg_grad_cam_pp")
