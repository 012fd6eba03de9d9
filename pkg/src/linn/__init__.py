"""Lightweight mono-to-binaural rendering with a time-domain warp and an implicit spectral corrector."""

from .config import ConfigError, ModelConfig
from .model import BinauralRenderer
from .pose import Pose, PoseTrack

__all__ = ["BinauralRenderer", "ConfigError", "ModelConfig", "Pose", "PoseTrack"]
__version__ = "0.1.0"
