"""Boundary-weighted BCE + IoU objective applied to every level of the prediction pyramid."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F

SCALE_WEIGHTS = (1.0, 0.5, 0.25, 0.125, 0.0625)
BOUNDARY_GAIN = 5.0
BOUNDARY_KERNEL = 31


def boundary_weights(y: torch.Tensor, kernel: int = BOUNDARY_KERNEL, gain: float = BOUNDARY_GAIN) -> torch.Tensor:
    """``1 + gain * |local_mean(y) - y|`` with a ``kernel`` x ``kernel`` window.

    Padding is excluded from the window mean so that a constant mask gets
    weight 1 everywhere, borders included.
    """
    pooled = F.avg_pool2d(y, kernel, stride=1, padding=kernel // 2, count_include_pad=False)
    return 1 + gain * (pooled - y).abs()


def resize_mask(y: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    """Pixel-centre aligned nearest-neighbour resize that stays binary."""
    if tuple(y.shape[-2:]) == tuple(size):
        return y
    return (F.interpolate(y, size=tuple(size), mode="nearest-exact") > 0.5).to(y.dtype)


def resize_weights(w: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    if tuple(w.shape[-2:]) == tuple(size):
        return w
    return F.interpolate(w, size=tuple(size), mode="bilinear", align_corners=False)


def weighted_bce(p: torch.Tensor, y: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Per-image ``sum(w * bce) / sum(w)`` in logit space, averaged over the batch."""
    bce = y * F.softplus(-p) + (1 - y) * F.softplus(p)
    return ((w * bce).sum(dim=(2, 3)) / w.sum(dim=(2, 3))).mean()


def weighted_iou(p: torch.Tensor, y: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Per-image ``1 - (sum(w q y) + 1) / (sum(w (q + y - q y)) + 1)`` with ``q = sigmoid(p)``, batch mean."""
    q = torch.sigmoid(p)
    inter = (w * q * y).sum(dim=(2, 3))
    union = (w * (q + y - q * y)).sum(dim=(2, 3))
    return (1 - (inter + 1) / (union + 1)).mean()


@dataclass
class LossBreakdown:
    total: torch.Tensor
    bce: List[torch.Tensor]
    iou: List[torch.Tensor]

    @property
    def levels(self) -> List[torch.Tensor]:
        """Unweighted ``bce + iou`` term per level, finest first."""
        return [b + i for b, i in zip(self.bce, self.iou)]

    def as_floats(self) -> Tuple[float, ...]:
        return tuple(float(t.detach()) for t in [self.total, *self.levels])


def combine(levels: Sequence[torch.Tensor]) -> torch.Tensor:
    """Weighted sum of per-level terms with weights 1, 1/2, 1/4, 1/8, 1/16."""
    if len(levels) != len(SCALE_WEIGHTS):
        raise ValueError(f"expected {len(SCALE_WEIGHTS)} pyramid levels, got {len(levels)}")
    return sum(wt * term for wt, term in zip(SCALE_WEIGHTS, levels))


def total_loss(preds: Sequence[torch.Tensor], y: torch.Tensor) -> LossBreakdown:
    if len(preds) != len(SCALE_WEIGHTS) or any(p is None for p in preds):
        raise ValueError(f"expected {len(SCALE_WEIGHTS)} pyramid levels, got {len(preds)}")
    w = boundary_weights(y)
    bces, ious = [], []
    for p in preds:
        size = p.shape[-2:]
        y_s, w_s = resize_mask(y, size), resize_weights(w, size)
        bces.append(weighted_bce(p, y_s, w_s))
        ious.append(weighted_iou(p, y_s, w_s))
    levels = [b + i for b, i in zip(bces, ious)]
    return LossBreakdown(combine(levels), bces, ious)
