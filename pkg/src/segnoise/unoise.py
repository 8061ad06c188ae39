"""Trainable noise model.

A small encoder-decoder learns per-pixel noise magnitudes ``O`` that corrupt
its input as much as possible while the frozen utility model keeps its own
clean prediction. At evaluation time it is run on explanation maps, and the
amount of noise it assigns is the faithfulness score.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core.data import Dataset
from .core.determinism import seed_everything, set_deterministic
from .core.model import SegModel, TrainingFloorError, class_iou, to_tensor
from .core.nets import EncoderDecoder
from .core.types import ExplanationMap, Image, NoiseMask

logger = logging.getLogger(__name__)

# Frozen by a one-off sweep over (0.01, 0.05, 0.1, 0.3); see sweep_lambda.
DEFAULT_LAMBDA = 0.1
DEFAULT_SCALE = 0.5
_INIT_LOGIT = -4.5


@dataclass(frozen=True)
class NoiseTrainConfig:
    lam: float = DEFAULT_LAMBDA
    noise_scale: float = DEFAULT_SCALE
    epochs: int = 20
    seed: int = 0
    lr: float = 3e-3
    batch_size: int = 16
    widths: tuple[int, ...] = (12, 24, 48)
    max_iou_drop: float = 0.05
    min_mean_noise: float = 0.2
    target_class: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be > 0")


class _NoiseNet(nn.Module):
    def __init__(self, in_channels: int, widths: Sequence[int]):
        super().__init__()
        self.body = EncoderDecoder(in_channels, 1, tuple(widths))
        # start from (almost) no noise so that the reward alone drives it up
        nn.init.constant_(self.body.head.bias, _INIT_LOGIT)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.body(x))[:, 0]


class NoiseModel:
    """Image -> NoiseMask through a sigmoid-bounded encoder-decoder."""

    def __init__(self, net: _NoiseNet, metadata: dict | None = None):
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.metadata = dict(metadata or {})

    @torch.no_grad()
    def predict(self, images, batch_size: int = 256) -> np.ndarray:
        x = to_tensor(images)
        out = [self.net(x[s:s + batch_size]) for s in range(0, x.shape[0], batch_size)]
        return torch.cat(out).double().numpy()


def _noised(x: torch.Tensor, o: torch.Tensor, scale: float, gen: torch.Generator | None):
    eps = torch.randn(x.shape, generator=gen, dtype=x.dtype)
    return (x + scale * o[:, None] * eps).clamp(0.0, 1.0)


def apply_noise(x: Image, O: NoiseMask, s: float = DEFAULT_SCALE, seed: int = 0) -> Image:
    """``clamp(x + s * O * eps, 0, 1)`` with ``eps`` i.i.d. standard normal per
    pixel and channel."""
    if O.values.shape != x.hw:
        raise ValueError(f"noise mask dims {O.values.shape} do not match image dims {x.hw}")
    if s <= 0:
        raise ValueError("noise scale must be > 0")
    eps = np.random.default_rng(seed).standard_normal(x.pixels.shape)
    out = x.pixels.astype(np.float64) + s * O.values[..., None] * eps
    return Image(np.clip(out, 0.0, 1.0))


def _evaluate(utility: SegModel, nm: NoiseModel, val: Dataset, cfg: NoiseTrainConfig) -> dict:
    x = val.images_array()
    y = val.labels_array()
    o = nm.predict(x)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    noisy = _noised(to_tensor(x), torch.from_numpy(o).float(), cfg.noise_scale, gen)
    noisy = noisy.permute(0, 2, 3, 1).numpy()
    clean_iou = class_iou(utility.predict_probs(x).argmax(-1), y, cfg.target_class)
    noisy_iou = class_iou(utility.predict_probs(noisy).argmax(-1), y, cfg.target_class)
    return {
        "clean_iou": clean_iou,
        "noisy_iou": noisy_iou,
        "iou_drop": clean_iou - noisy_iou,
        "mean_noise": float(o.mean()),
    }


def train_unoise(
    utility: SegModel,
    dataset: Dataset,
    cfg: NoiseTrainConfig = NoiseTrainConfig(),
    *,
    val: Dataset | None = None,
    enforce: bool = True,
) -> NoiseModel:
    """Train a noise model against a frozen ``utility`` model.

    Minimizes ``CE(utility(noised x), argmax utility(x)) - lam * mean(O)``.
    With ``enforce`` and a validation split, raises
    :class:`TrainingFloorError` unless the noised IoU drop is at most
    ``cfg.max_iou_drop`` and the mean validation noise at least
    ``cfg.min_mean_noise``.
    """
    set_deterministic(True)
    gen = seed_everything(cfg.seed)
    x_all = to_tensor(dataset.images_array())
    with torch.no_grad():
        targets = torch.cat(
            [utility.logits(x_all[s:s + 256]).argmax(1) for s in range(0, len(x_all), 256)]
        )
    net = _NoiseNet(x_all.shape[1], cfg.widths)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    steps = cfg.epochs * int(np.ceil(len(dataset) / cfg.batch_size))
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=cfg.lr, total_steps=steps)
    trace = []
    for epoch in range(cfg.epochs):
        net.train()
        perm = torch.randperm(len(dataset), generator=gen)
        seg_sum = noise_sum = 0.0
        for start in range(0, len(dataset), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb = x_all[idx]
            o = net(xb)
            seg = F.cross_entropy(utility.logits(_noised(xb, o, cfg.noise_scale, gen)), targets[idx])
            loss = seg - cfg.lam * o.mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            seg_sum += seg.item() * len(idx)
            noise_sum += o.mean().item() * len(idx)
        entry = {
            "epoch": epoch + 1,
            "seg_loss": seg_sum / len(dataset),
            "train_mean_noise": noise_sum / len(dataset),
        }
        if val is not None:
            entry.update(_evaluate(utility, NoiseModel(net), val, cfg))
            for p in net.parameters():
                p.requires_grad_(True)
        trace.append(entry)
        logger.info("noise epoch %d: %s", epoch + 1, entry)

    model = NoiseModel(net)
    final = trace[-1]
    model.metadata = {
        "lambda": cfg.lam,
        "s": cfg.noise_scale,
        "mean_noise_val": final.get("mean_noise"),
        "iou_drop_val": final.get("iou_drop"),
        "config": asdict(cfg),
        "in_channels": int(x_all.shape[1]),
    }
    if enforce and val is not None:
        if not (final["iou_drop"] <= cfg.max_iou_drop and final["mean_noise"] >= cfg.min_mean_noise):
            raise TrainingFloorError(
                f"noise model missed its floors: IoU drop {final['iou_drop']:.4f} "
                f"(max {cfg.max_iou_drop}), mean noise {final['mean_noise']:.4f} "
                f"(min {cfg.min_mean_noise})",
                {"pareto": [(e.get("iou_drop"), e.get("mean_noise")) for e in trace], "trace": trace},
            )
    model.metadata["trace"] = trace
    return model


def sweep_lambda(
    utility: SegModel,
    dataset: Dataset,
    val: Dataset,
    lambdas: Sequence[float] = (0.01, 0.05, 0.1, 0.3),
    base: NoiseTrainConfig = NoiseTrainConfig(),
) -> tuple[float | None, list[dict]]:
    """Pick the lambda with the largest validation noise that keeps the IoU
    drop within ``base.max_iou_drop``."""
    rows, best, best_noise = [], None, -1.0
    for lam in lambdas:
        cfg = NoiseTrainConfig(**{**asdict(base), "lam": lam})
        nm = train_unoise(utility, dataset, cfg, val=val, enforce=False)
        row = {"lambda": lam, "mean_noise": nm.metadata["mean_noise_val"], "iou_drop": nm.metadata["iou_drop_val"]}
        rows.append(row)
        if row["iou_drop"] <= base.max_iou_drop and row["mean_noise"] > best_noise:
            best, best_noise = lam, row["mean_noise"]
    return best, rows


def noise_mask(nm: NoiseModel, explanation: ExplanationMap | Image) -> NoiseMask:
    """Deterministic forward pass of the noise model on one input."""
    o = nm.predict(explanation.pixels[None])[0]
    source = getattr(explanation, "source_method", "image")
    return NoiseMask(np.clip(o, 0.0, 1.0), source=source)


def save_noise_model(nm: NoiseModel, path) -> tuple[Path, Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(nm.net.state_dict(), path)
    meta = {k: v for k, v in nm.metadata.items() if k != "trace"}
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def load_noise_model(path) -> NoiseModel:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    net = _NoiseNet(meta["in_channels"], tuple(meta["config"]["widths"]))
    net.load_state_dict(torch.load(path, weights_only=True))
    return NoiseModel(net, meta)
