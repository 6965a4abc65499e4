"""Intra-stage coherence: fuse 3x3 and 5x5 receptive fields within one stage."""

import torch
import torch.nn as nn

from .blocks import ConvBNReLU, conv


class ISC(nn.Module):
    """Intra-stage coherence block.

    With ``r = conv1(f)`` (linear), ``f3 = conv3(conv1a(f))`` and
    ``f5 = conv5(conv1b(f))``, the output is
    ``r + conv3_out(conv3(f3 + f5) * conv5(f3 + f5))``.

    The three 1x1 convolutions are independent (no weight sharing). Branch
    convolutions carry BN + ReLU; the residual projection and the outer 3x3
    that produces the fusion term are linear so the sum is literal.
    """

    def __init__(self, in_channels: int, width: int = 64):
        super().__init__()
        self.residual = nn.Conv2d(in_channels, width, 1)
        self.reduce3 = ConvBNReLU(in_channels, width, 1)
        self.reduce5 = ConvBNReLU(in_channels, width, 1)
        self.branch3 = ConvBNReLU(width, width, 3)
        self.branch5 = ConvBNReLU(width, width, 5)
        self.merge3 = ConvBNReLU(width, width, 3)
        self.merge5 = ConvBNReLU(width, width, 5)
        self.out = conv(width, width, 3)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        f3 = self.branch3(self.reduce3(f))
        f5 = self.branch5(self.reduce5(f))
        merged = f3 + f5
        return self.residual(f) + self.out(self.merge3(merged) * self.merge5(merged))
