"""Semantic change pattern analysis toolkit."""

__version__ = "0.1.0"

from .codec import ChangeCodec, LandClassSet, change_map, max_change_types
from .errors import DataError, ScpaError
from .metrics import ChangeConfusion, MetricsReport, accumulate, binary_accuracy, mean_iou, report
from .rasters import ChangeRaster, LabelRaster, Palette

__all__ = [
    "ChangeCodec",
    "ChangeConfusion",
    "ChangeRaster",
    "DataError",
    "LabelRaster",
    "LandClassSet",
    "MetricsReport",
    "Palette",
    "ScpaError",
    "accumulate",
    "binary_accuracy",
    "change_map",
    "max_change_types",
    "mean_iou",
    "report",
]
