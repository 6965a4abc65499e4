"""Concealed object segmentation: ResNet50 encoder, intra- and cross-stage feature coherence blocks, reverse-attention decoder."""

from .model import HCM, PredictionPyramid

__version__ = "0.1.0"

__all__ = ["HCM", "PredictionPyramid", "__version__"]
