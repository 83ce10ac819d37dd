"""Gated long/short two-stream video transformer for online step recognition."""

from .config import GatingMode, ModelConfig
from .estimator import GatedStreamClassifier
from .model import GatedStreamTransformer
from .sampler import StreamConfig, StreamWindow, sample_window

__all__ = [
    "GatedStreamClassifier",
    "GatedStreamTransformer",
    "GatingMode",
    "ModelConfig",
    "StreamConfig",
    "StreamWindow",
    "sample_window",
]

__version__ = "0.1.0"
