"""ResNet50 feature pyramid and the ASPP head producing the coarse map."""

from pathlib import Path
from typing import List, Optional, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from .blocks import ConvBNReLU

STAGE_CHANNELS = (64, 256, 512, 1024, 2048)
STAGE_STRIDES = (2, 4, 8, 16, 32)
ASPP_RATES = (1, 6, 12, 18)


def check_image(x: torch.Tensor) -> None:
    """Raise ValueError unless ``x`` is a finite B x 3 x H x W batch with H, W divisible by 32."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a B x 3 x H x W image batch, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 32 or w % 32:
        raise ValueError(f"image size {h}x{w} is not divisible by 32; check the resize step")
    if not torch.isfinite(x).all():
        raise ValueError("image batch contains non-finite values")


def load_backbone_weights(net: nn.Module, path: Union[str, Path]) -> None:
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    # classifier weights are not part of the trunk
    state = {k: v for k, v in state.items() if not k.startswith("fc.")}
    net.load_state_dict(state, strict=True)


class ResNetEncoder(nn.Module):
    """Five-stage ResNet50 trunk returning [f0, ..., f4] at strides 2..32."""

    def __init__(self, weights: Optional[Union[str, Path]] = None):
        super().__init__()
        net = torchvision.models.resnet50(weights=None)
        del net.fc
        if weights is not None:
            load_backbone_weights(net, weights)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.pool = net.maxpool
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        check_image(x)
        f0 = self.stem(x)
        f1 = self.layer1(self.pool(f0))
        f2 = self.layer2(f1)
        f3 = self.layer3(f2)
        f4 = self.layer4(f3)
        return [f0, f1, f2, f3, f4]


class ASPP(nn.Module):
    """Atrous spatial pyramid pooling over the stride-32 feature.

    Four 3x3 branches at dilations 1/6/12/18 and an image-level pooling
    branch are concatenated and fused to ``width`` channels (the feature
    ``f5``); a linear 1x1 projection of ``f5`` gives the coarse logits ``p5``.
    """

    def __init__(self, in_channels: int = 2048, width: int = 64, rates: Tuple[int, ...] = ASPP_RATES):
        super().__init__()
        self.branches = nn.ModuleList(ConvBNReLU(in_channels, width, 3, dilation=r) for r in rates)
        # no norm here: a 1x1 map with batch size 1 has no usable batch statistics
        self.image_pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_channels, width, 1),
            nn.ReLU(inplace=True),
        )
        self.fuse = ConvBNReLU(width * (len(rates) + 1), width, 1)
        self.project = nn.Conv2d(width, 1, 1)

    def forward(self, f4: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        size = f4.shape[-2:]
        outs = [branch(f4) for branch in self.branches]
        outs.append(F.interpolate(self.image_pool(f4), size=size, mode="bilinear", align_corners=False))
        f5 = self.fuse(torch.cat(outs, dim=1))
        return f5, self.project(f5)
