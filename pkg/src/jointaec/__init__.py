"""Streaming multichannel echo and noise control with a room-acoustics simulator."""

from .frames import ConfigurationError, FrameConfig
from .pipeline import Pipeline, process_stream

__all__ = ["ConfigurationError", "FrameConfig", "Pipeline", "process_stream"]
__version__ = "0.1.0"
