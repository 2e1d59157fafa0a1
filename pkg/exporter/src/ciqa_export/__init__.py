"""Export torchvision backbones to the ciqa ONNX interchange format."""

from .cli import export_backbone
from .recipes import BACKBONES, ExportRecipe, TapResolutionError, UnknownBackbone

__all__ = ["BACKBONES", "ExportRecipe", "TapResolutionError", "UnknownBackbone",
           "export_backbone"]
