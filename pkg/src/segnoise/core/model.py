"""Utility segmentation model: the frozen network whose decisions get explained."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import Dataset
from .determinism import seed_everything, set_deterministic
from .nets import EncoderDecoder, count_parameters
from .types import Image, ProbMask

logger = logging.getLogger(__name__)

MAX_PARAMS = 500_000
DEFAULT_WIDTHS = (12, 24, 48)


class TrainingFloorError(RuntimeError):
    """A trained model missed its quality floor; ``trace`` holds the training curve."""

    def __init__(self, message: str, trace: dict):
        super().__init__(message)
        self.trace = trace


def to_tensor(images) -> torch.Tensor:
    """N x H x W x C (or a single H x W x C) array -> N x C x H x W float tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


class SegModel:
    """Segmentation model wrapper exposing black-box and white-box access.

    Black-box callers use :meth:`predict` / :meth:`predict_probs`; white-box
    explainers reach internal layers through :attr:`net` and :meth:`layer`.
    """

    def __init__(self, net: torch.nn.Module, num_classes: int, metadata: dict | None = None):
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.num_classes = num_classes
        self.metadata = dict(metadata or {})

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def layer(self, name: str) -> torch.nn.Module:
        try:
            return self.net.get_submodule(name)
        except AttributeError as exc:
            raise KeyError(f"model has no layer named {name!r}") from exc

    @torch.no_grad()
    def predict_probs(self, images, batch_size: int = 256) -> np.ndarray:
        """Class probabilities, N x H x W x K, for an N x H x W x C batch."""
        x = to_tensor(images)
        out = []
        for start in range(0, x.shape[0], batch_size):
            out.append(torch.softmax(self.net(x[start:start + batch_size]), dim=1))
        return torch.cat(out).permute(0, 2, 3, 1).numpy()

    def predict(self, image: Image) -> ProbMask:
        probs = self.predict_probs(image.pixels[None]).astype(np.float64)[0]
        return ProbMask(probs / probs.sum(axis=2, keepdims=True))

    def state_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k, v in self.net.state_dict().items():
            h.update(k.encode())
            h.update(v.detach().cpu().numpy().tobytes())
        return h.hexdigest()


def class_iou(pred: np.ndarray, labels: np.ndarray, c: int = 1) -> float:
    """Mean per-image IoU of class ``c``; images where the class is absent from
    both prediction and ground truth are skipped."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.ndim == 2:
        pred, labels = pred[None], labels[None]
    ious = []
    for p, t in zip(pred == c, labels == c):
        union = np.logical_or(p, t).sum()
        if union:
            ious.append(np.logical_and(p, t).sum() / union)
    return float(np.mean(ious)) if ious else float("nan")


def train_utility(
    dataset: Dataset,
    epochs: int = 20,
    seed: int = 0,
    *,
    val: Dataset | None = None,
    widths: Sequence[int] = DEFAULT_WIDTHS,
    lr: float = 3e-3,
    batch_size: int = 16,
    noise_aug: float = 0.1,
    skip_dropout: float = 0.5,
    min_val_iou: float = 0.85,
    target_class: int = 1,
) -> SegModel:
    """Train the encoder-decoder on ``dataset``.

    ``noise_aug`` is the maximum standard deviation of Gaussian pixel noise
    added to training inputs (drawn per batch item). ``skip_dropout`` drops
    skip-connection channels during training so the deepest encoder block
    carries object evidence rather than only context. Raises
    :class:`TrainingFloorError` when validation IoU for ``target_class``
    ends below ``min_val_iou``.
    """
    if len(dataset) < 100:
        raise ValueError("train_utility needs at least 100 training items")
    set_deterministic(True)
    gen = seed_everything(seed)
    chans = dataset.items[0][0].channels
    net = EncoderDecoder(chans, dataset.num_classes, tuple(widths), skip_dropout=skip_dropout)
    if count_parameters(net) > MAX_PARAMS:
        raise ValueError(f"utility model exceeds {MAX_PARAMS} parameters")
    x_all = to_tensor(dataset.images_array())
    y_all = torch.from_numpy(dataset.labels_array())
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    steps = epochs * int(np.ceil(len(dataset) / batch_size))
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=lr, total_steps=steps)

    val_x = val.images_array() if val is not None else None
    val_y = val.labels_array() if val is not None else None
    curve = []
    for epoch in range(epochs):
        net.train()
        perm = torch.randperm(len(dataset), generator=gen)
        total = 0.0
        for start in range(0, len(dataset), batch_size):
            idx = perm[start:start + batch_size]
            xb, yb = x_all[idx], y_all[idx]
            if noise_aug > 0:
                sd = torch.rand(len(idx), 1, 1, 1, generator=gen) * noise_aug
                xb = (xb + sd * torch.randn(xb.shape, generator=gen)).clamp(0, 1)
            loss = F.cross_entropy(net(xb), yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
        entry = {"epoch": epoch + 1, "train_loss": total / len(dataset)}
        if val is not None:
            model = SegModel(net, dataset.num_classes)
            entry["val_iou"] = class_iou(model.predict_probs(val_x).argmax(-1), val_y, target_class)
            for p in net.parameters():
                p.requires_grad_(True)
        curve.append(entry)
        logger.info("utility epoch %d: %s", epoch + 1, entry)

    model = SegModel(net, dataset.num_classes)
    val_iou = curve[-1].get("val_iou", float("nan"))
    model.metadata = {
        "seed": seed,
        "epochs": epochs,
        "dataset_hash": dataset.content_hash(),
        "val_iou": val_iou,
        "num_classes": dataset.num_classes,
        "in_channels": chans,
        "widths": list(widths),
        "skip_dropout": skip_dropout,
        "target_class": target_class,
    }
    if val is not None and not val_iou >= min_val_iou:
        raise TrainingFloorError(
            f"utility val IoU {val_iou:.4f} below floor {min_val_iou}", {"curve": curve}
        )
    model.metadata["curve"] = curve
    return model


def save_model(model: SegModel, path, extra: dict | None = None) -> tuple[Path, Path]:
    """Persist weights (torch state dict) plus a JSON metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.net.state_dict(), path)
    meta = {k: v for k, v in model.metadata.items() if k != "curve"}
    meta.update(extra or {})
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def load_utility(path) -> SegModel:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    net = EncoderDecoder(
        meta["in_channels"], meta["num_classes"], tuple(meta["widths"]), skip_dropout=meta.get("skip_dropout", 0.0)
    )
    net.load_state_dict(torch.load(path, weights_only=True))
    return SegModel(net, meta["num_classes"], meta)
