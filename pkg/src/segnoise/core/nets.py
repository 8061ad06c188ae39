from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F


def _block(cin: int, cout: int, norm: bool = True) -> nn.Sequential:
    layers = []
    for a, b in ((cin, cout), (cout, cout)):
        layers.append(nn.Conv2d(a, b, 3, padding=1, bias=not norm))
        if norm:
            layers.append(nn.BatchNorm2d(b))
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class EncoderDecoder(nn.Module):
    """Three-level encoder-decoder with skip connections.

    ``enc3`` is the deepest encoder block (1/4 resolution) and the default
    Grad-CAM target layer.
    """

    def __init__(self, in_channels: int = 3, out_channels: int = 2, widths=(16, 32, 64), norm: bool = True, skip_dropout: float = 0.0):
        super().__init__()
        w1, w2, w3 = widths
        self.enc1 = _block(in_channels, w1, norm)
        self.enc2 = _block(w1, w2, norm)
        self.enc3 = _block(w2, w3, norm)
        self.up2 = nn.ConvTranspose2d(w3, w2, 2, stride=2)
        self.dec2 = _block(2 * w2, w2, norm)
        self.up1 = nn.ConvTranspose2d(w2, w1, 2, stride=2)
        self.dec1 = _block(2 * w1, w1, norm)
        self.head = nn.Conv2d(w1, out_channels, 1)
        self.skip_drop = nn.Dropout2d(skip_dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        e3 = self.enc3(F.max_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([self.up2(e3), self.skip_drop(e2)], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), self.skip_drop(e1)], dim=1))
        return self.head(d1)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
