"""Dataset-agnostic 3D bounding-box re-annotation toolkit."""

from .types import (
    Box3D,
    CameraCalibration,
    FrameRecord,
    LogBundle,
    PointCloud,
    Quaternion,
    SE3Pose,
)
from .errors import (
    ConversionError,
    DegenerateDrag,
    DegenerateView,
    EditRejected,
    LogLoadError,
    LogValidationError,
    ReboundError,
    UnknownTarget,
    Violation,
)

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "CameraCalibration",
    "ConversionError",
    "DegenerateDrag",
    "DegenerateView",
    "EditRejected",
    "FrameRecord",
    "LogBundle",
    "LogLoadError",
    "LogValidationError",
    "PointCloud",
    "Quaternion",
    "ReboundError",
    "SE3Pose",
    "UnknownTarget",
    "Violation",
    "__version__",
]
