"""Encoder, coherence blocks and decoder assembled into one segmenter."""

from pathlib import Path
from typing import List, NamedTuple, Optional, Union

import torch
import torch.nn as nn

from .csc import CSC
from .encoder import ASPP, STAGE_CHANNELS, ResNetEncoder
from .isc import ISC
from .rrd import Decoder


class PredictionPyramid(NamedTuple):
    """Logit maps at strides 4, 8, 16, 32 and 32 (the ASPP coarse map)."""

    p1: torch.Tensor
    p2: torch.Tensor
    p3: torch.Tensor
    p4: torch.Tensor
    p5: torch.Tensor


class HCM(nn.Module):
    """Encoder -> ISC per stage -> CSC across stages -> reversible decoder.

    The ablation flags swap components for simpler stand-ins:
    ``use_isc=False`` uses a 1x1 projection per stage, ``use_csc=False``
    passes the stage features through unchanged, ``use_rrd=False`` predicts
    each level with a plain 3x3 conv without the coarser prior.
    """

    def __init__(
        self,
        width: int = 64,
        use_isc: bool = True,
        use_csc: bool = True,
        use_rrd: bool = True,
        backbone_weights: Optional[Union[str, Path]] = None,
    ):
        super().__init__()
        self.width = width
        self.encoder = ResNetEncoder(backbone_weights)
        self.aspp = ASPP(STAGE_CHANNELS[4], width)
        if use_isc:
            self.isc = nn.ModuleList(ISC(c, width) for c in STAGE_CHANNELS[1:])
        else:
            self.isc = nn.ModuleList(nn.Conv2d(c, width, 1) for c in STAGE_CHANNELS[1:])
        self.csc = nn.ModuleList(CSC(width) for _ in range(4)) if use_csc else None
        self.decoder = Decoder(width, use_rrd)

    def context_features(self, feats: List[torch.Tensor], f5: torch.Tensor) -> List[torch.Tensor]:
        coherent = [block(f) for block, f in zip(self.isc, feats[1:])]
        if self.csc is None:
            return coherent
        # stage 4 pairs with the ASPP feature, which shares its resolution
        higher = coherent[1:] + [f5]
        return [block(lo, hi) for block, lo, hi in zip(self.csc, coherent, higher)]

    def forward(self, x: torch.Tensor) -> PredictionPyramid:
        feats = self.encoder(x)
        f5, p5 = self.aspp(feats[4])
        context = self.context_features(feats, f5)
        return PredictionPyramid(*self.decoder(context, p5))
