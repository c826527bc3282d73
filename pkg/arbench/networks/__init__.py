"""Autoregressive density models, the feature classifier and generators."""

from arbench.networks.base import ARModel, ParametricModule, UniformARModel
from arbench.networks.checkpoint import load_checkpoint, restore_module, save_checkpoint
from arbench.networks.classifier import ConvClassifier
from arbench.networks.generator import ConvGenerator, IdentityGenerator
from arbench.networks.made import MadeModel, build_made_masks, path_matrix
from arbench.networks.pixel import PixelARModel, pixel_receptive_field_check

__all__ = [
    "ARModel",
    "ConvClassifier",
    "ConvGenerator",
    "IdentityGenerator",
    "MadeModel",
    "ParametricModule",
    "PixelARModel",
    "UniformARModel",
    "build_made_masks",
    "load_checkpoint",
    "path_matrix",
    "pixel_receptive_field_check",
    "restore_module",
    "save_checkpoint",
]
