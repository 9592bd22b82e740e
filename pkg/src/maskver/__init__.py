"""Mask-robust face detection and identity verification for online proctoring."""

from maskver.detector import Detection, DetectionClass, DetectorConfig, detect_faces
from maskver.estimators import FaceEmbedder, FaceMaskDetector, GalleryMatcher
from maskver.gallery import Gallery, MatchResult, euclidean_distance
from maskver.geometry import BoundingBox, ciou, iou

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Detection",
    "DetectionClass",
    "DetectorConfig",
    "FaceEmbedder",
    "FaceMaskDetector",
    "Gallery",
    "GalleryMatcher",
    "MatchResult",
    "__version__",
    "ciou",
    "detect_faces",
    "euclidean_distance",
    "iou",
]
