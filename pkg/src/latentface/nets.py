"""Small convolutional building blocks shared by generator, encoders and
discriminators. All nets are CPU-sized: 32x32 inputs, tens of thousands of
parameters."""

from __future__ import annotations

import torch
from torch import nn


def lrelu() -> nn.Module:
    return nn.LeakyReLU(0.2)


class ConvTrunk(nn.Module):
    """Strided conv stack: (B, in_ch, R, R) -> (B, out_dim) flat features."""

    def __init__(self, in_channels: int, resolution: int, widths=(32, 48, 64)):
        super().__init__()
        layers = []
        ch = in_channels
        res = resolution
        for w in widths:
            layers += [nn.Conv2d(ch, w, 3, stride=2, padding=1), lrelu()]
            ch, res = w, res // 2
        self.body = nn.Sequential(*layers)
        self.out_dim = ch * res * res

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x).flatten(1)


class CodePredictor(nn.Module):
    """Image (or any raster modality) to a layerwise code (B, L, C)."""

    def __init__(self, in_channels: int, resolution: int, layers: int, channels: int,
                 widths=(32, 48, 64), hidden: int = 256):
        super().__init__()
        self.layers = layers
        self.channels = channels
        self.trunk = ConvTrunk(in_channels, resolution, widths)
        self.head = nn.Sequential(
            nn.Linear(self.trunk.out_dim, hidden), lrelu(),
            nn.Linear(hidden, layers * channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.head(self.trunk(x))
        return out.view(-1, self.layers, self.channels)


class DiscriminatorNet(nn.Module):
    """Image to an unnormalized realness score (B,)."""

    def __init__(self, resolution: int, in_channels: int = 3, widths=(24, 48, 64)):
        super().__init__()
        self.trunk = ConvTrunk(in_channels, resolution, widths)
        self.head = nn.Linear(self.trunk.out_dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(x)).squeeze(1)
