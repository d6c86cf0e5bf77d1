"""Insect tracking and pollination counts from camera-trap video."""

from .assignment import solve_assignment
from .core import Detection, EngineConfig, SpeciesClass, VideoMeta, decode_track_code, make_track_code

__all__ = [
    "Detection",
    "EngineConfig",
    "SpeciesClass",
    "VideoMeta",
    "decode_track_code",
    "make_track_code",
    "solve_assignment",
]
__version__ = "0.1.0"
