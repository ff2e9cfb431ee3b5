from .backends import (
    DETECTION,
    SEG_CLASSES,
    SEGMENTATION,
    LuminanceBackend,
    PassthroughDetection,
    PassthroughSegmentation,
    SegClass,
    SegmentationBackend,
)
from .ensemble import Ensemble, ensemble_average, threshold
from .external import ExternalBackend
from .pipeline import run_detection, run_segmentation

__all__ = [
    "DETECTION",
    "SEGMENTATION",
    "SEG_CLASSES",
    "Ensemble",
    "ExternalBackend",
    "LuminanceBackend",
    "PassthroughDetection",
    "PassthroughSegmentation",
    "SegClass",
    "SegmentationBackend",
    "ensemble_average",
    "run_detection",
    "run_segmentation",
    "threshold",
]
