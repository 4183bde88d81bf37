"""Monocular depth estimation with frame-lifted skip features and adaptive depth bins."""

from .errors import ConfigError
from .model import LiftDepthNet, ModelConfig, build_model

__all__ = ["ConfigError", "LiftDepthNet", "ModelConfig", "build_model"]
__version__ = "0.1.0"
