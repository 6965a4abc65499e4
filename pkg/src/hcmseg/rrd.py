"""Reversible re-calibration decoder.

Each step gates the stage context feature by the sigmoid of the coarser
prediction and by its complement, concatenates both views, refines them
with a residual channel-attention block and emits new logits.
"""

from typing import List, Sequence, Tuple

import torch
import torch.nn as nn

from .blocks import ChannelAttention, conv
from .csc import upsample


class RCAB(nn.Module):
    """Residual channel attention block: ``x + CA(conv3(relu(conv3(x))))``."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.conv1 = conv(channels, channels, 3)
        self.act = nn.ReLU(inplace=True)
        self.conv2 = conv(channels, channels, 3)
        self.attention = ChannelAttention(channels, reduction)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.attention(self.conv2(self.act(self.conv1(x))))


def prior_gates(p_next: torch.Tensor, f_c: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Forward gate ``sigmoid(p)`` and reverse gate ``1 - sigmoid(p)``, resized and repeated to ``f_c``."""
    if p_next.shape[1] != 1:
        raise ValueError(f"prior prediction must have one channel, got {p_next.shape[1]}")
    a = torch.sigmoid(upsample(p_next, f_c.shape[-2:]))
    a = a.expand(-1, f_c.shape[1], -1, -1)
    return a, 1 - a


class RRDStep(nn.Module):
    def __init__(self, width: int = 64, reduction: int = 16):
        super().__init__()
        self.rcab = RCAB(2 * width, reduction)
        self.head = conv(2 * width, 1, 3)

    def fuse(self, fwd: torch.Tensor, rev: torch.Tensor) -> torch.Tensor:
        return self.head(self.rcab(torch.cat([fwd, rev], dim=1)))

    def forward(self, f_c: torch.Tensor, p_next: torch.Tensor) -> torch.Tensor:
        a, rev = prior_gates(p_next, f_c)
        return self.fuse(f_c * a, f_c * rev)


class PlainHead(nn.Module):
    """Ablation stand-in for an RRD step: a linear 3x3 conv on the context feature, prior ignored."""

    def __init__(self, width: int = 64):
        super().__init__()
        self.head = conv(width, 1, 3)

    def forward(self, f_c: torch.Tensor, p_next: torch.Tensor) -> torch.Tensor:
        return self.head(f_c)


class Decoder(nn.Module):
    """Top-down decoding: p4 from (f4c, p5), p3 from (f3c, p4), ... down to p1."""

    def __init__(self, width: int = 64, use_rrd: bool = True, reduction: int = 16):
        super().__init__()
        make = (lambda: RRDStep(width, reduction)) if use_rrd else (lambda: PlainHead(width))
        self.steps = nn.ModuleList(make() for _ in range(4))

    def forward(self, context: Sequence[torch.Tensor], p5: torch.Tensor) -> List[torch.Tensor]:
        if len(context) != 4:
            raise ValueError(f"decoder needs four context features, got {len(context)}")
        preds = [p5]
        for step, f_c in zip(reversed(self.steps), reversed(context)):
            preds.insert(0, step(f_c, preds[0]))
        return preds
