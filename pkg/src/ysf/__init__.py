"""Y-shaped autoencoder for joint detection and segmentation of manipulated face images."""

from .model import ModelConfig, Variant, build_model, classify, selection_block

__all__ = ["ModelConfig", "Variant", "build_model", "classify", "selection_block"]
__version__ = "0.1.0"
