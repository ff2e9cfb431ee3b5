"""TILs scoring for whole-slide images.

Segment tumour and stroma, build the tumour bulk, detect lymphocytes and
turn the count inside tumour-associated stroma into a 0-100 score.
"""

__version__ = "0.1.0"

from .bulk import BulkParams, TilsResult, run_pipeline, score_wsi, tils_score, tumour_bulk
from .config import PipelineConfig, load_config
from .detection import Detection, detect, nms
from .raster import DET_LEVEL, SEG_LEVEL, Raster, Resolution
from .slide import Slide, load_slide

__all__ = [
    "BulkParams",
    "DET_LEVEL",
    "Detection",
    "PipelineConfig",
    "Raster",
    "Resolution",
    "SEG_LEVEL",
    "Slide",
    "TilsResult",
    "detect",
    "load_config",
    "load_slide",
    "nms",
    "run_pipeline",
    "score_wsi",
    "tils_score",
    "tumour_bulk",
]
