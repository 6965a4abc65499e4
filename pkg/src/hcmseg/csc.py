"""Cross-stage coherence: joint attention over adjacent stages, then position normalization."""

from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import ChannelAttention, ConvBNReLU, SpatialAttention

PN_EPS = 1e-5


def upsample(x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    """Bilinear resize (corners not aligned); a no-op when sizes already match."""
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


def position_norm(x: torch.Tensor, eps: float = PN_EPS) -> torch.Tensor:
    """Normalize every (batch, y, x) position across channels; population variance, no affine."""
    mean = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class JointAttention(nn.Module):
    """Fuse two same-shaped features with a 1x1 conv, then gate by channel and spatial attention.

    ``gates_open`` is a test hook: when True both gates are bypassed and the
    output is the plain 1x1 fusion.
    """

    def __init__(self, width: int = 64, reduction: int = 16):
        super().__init__()
        self.fuse = ConvBNReLU(2 * width, width, 1)
        self.channel = ChannelAttention(width, reduction)
        self.spatial = SpatialAttention(7)
        self.gates_open = False

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ValueError(f"joint attention inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
        g = self.fuse(torch.cat([a, b], dim=1))
        if self.gates_open:
            return g
        return self.spatial(self.channel(g))


class CSC(nn.Module):
    """``position_norm(joint_attention(f_low, upsample(f_high)))`` at the lower stage's resolution."""

    def __init__(self, width: int = 64, reduction: int = 16):
        super().__init__()
        self.attention = JointAttention(width, reduction)

    def forward(self, f_low: torch.Tensor, f_high: torch.Tensor) -> torch.Tensor:
        return position_norm(self.attention(f_low, upsample(f_high, f_low.shape[-2:])))
