"""Diffusion-enhanced embedded topic modeling toolchain."""

from .model import ModelConfig
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = ["ModelConfig", "TrainConfig", "__version__"]
