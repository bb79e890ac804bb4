"""Person detection on low-resolution thermal frames across supervision levels."""

from .boxes import BoundingBox, Detection
from .imaging import IRFrame, ThresholdConfig

__version__ = "0.1.0"

__all__ = ["BoundingBox", "Detection", "IRFrame", "ThresholdConfig", "__version__"]
