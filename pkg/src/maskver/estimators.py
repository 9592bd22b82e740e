"""Scikit-learn style wrappers so the pipeline composes with that ecosystem.

FaceMaskDetector predicts per-frame detections, FaceEmbedder transforms
face chips into 128-D vectors, and GalleryMatcher is a nearest-neighbor
identity classifier with an open-set "unknown" decision. All three follow
the estimator protocol (get_params/set_params/clone, fitted attributes
with trailing underscores).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from maskver.detector import DetectorConfig, detect_faces
from maskver.gallery import DEFAULT_MATCH_THRESHOLD, UNKNOWN, Gallery
from maskver.inference import ModelHandle, load_model
from maskver.validation import (
    check_chip_batch,
    check_embedding_matrix,
    check_frame_batch,
)


def _resolve_model(model) -> ModelHandle:
    if isinstance(model, ModelHandle):
        return model
    return load_model(model)


class FaceMaskDetector(BaseEstimator):
    """Two-class (mask / no_mask) face detector over RGB frames.

    Parameters
    ----------
    model : str, Path, or ModelHandle
        Model file (.onnx / .stub.json) or an already-loaded handle.
    conf_threshold, nms_iou_threshold, max_detections, input_size
        Post-processing knobs; see DetectorConfig for defaults.
    """

    def __init__(self, model=None, conf_threshold=0.25, nms_iou_threshold=0.45,
                 max_detections=300, input_size=640):
        self.model = model
        self.conf_threshold = conf_threshold
        self.nms_iou_threshold = nms_iou_threshold
        self.max_detections = max_detections
        self.input_size = input_size

    def fit(self, X=None, y=None):
        """Load the pretrained model; no estimation happens here."""
        if self.model is None:
            raise ValueError("FaceMaskDetector requires a model to load")
        self.model_ = _resolve_model(self.model)
        self.config_ = DetectorConfig(
            confidence_threshold=self.conf_threshold,
            nms_iou_threshold=self.nms_iou_threshold,
            input_size=self.input_size,
            max_detections=self.max_detections,
        )
        return self

    def predict(self, X):
        """Detections for each frame in X (sequence or (n, H, W, 3) array)."""
        if not hasattr(self, "model_"):
            raise NotFittedError("FaceMaskDetector is not fitted; call fit() first")
        return [detect_faces(frame, self.model_, self.config_)
                for frame in check_frame_batch(X)]


class FaceEmbedder(TransformerMixin, BaseEstimator):
    """Maps face chips to 128-D identity embeddings."""

    def __init__(self, model="tiny-embedder"):
        self.model = model

    def fit(self, X=None, y=None):
        self.model_ = _resolve_model(self.model)
        spec = self.model_.input_specs[0]
        self.chip_size_ = spec.shape[-1]
        return self

    def transform(self, X) -> np.ndarray:
        """Embed chips; accepts HxWx3 uint8 chips or an (n, 3, s, s) batch."""
        if not hasattr(self, "model_"):
            raise NotFittedError("FaceEmbedder is not fitted; call fit() first")
        batch = check_chip_batch(X, self.chip_size_)
        if len(batch) == 0:
            return np.zeros((0, 128), np.float32)
        outputs = self.model_.run({self.model_.input_specs[0].name: batch})
        return outputs[self.model_.output_specs[0].name]


class GalleryMatcher(BaseEstimator):
    """Open-set nearest-neighbor classifier over enrolled identities.

    fit(X, y) enrolls each embedding under its identity label; predict
    returns the nearest identity within the distance threshold, else
    ``"unknown"``.
    """

    def __init__(self, threshold=DEFAULT_MATCH_THRESHOLD):
        self.threshold = threshold

    def fit(self, X, y):
        X = check_embedding_matrix(X)
        y = np.asarray(y, dtype=object)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)} labels")
        self.gallery_ = Gallery()
        for embedding, label in zip(X, y):
            self.gallery_.enroll(str(label), str(label), embedding)
        self.classes_ = np.unique([str(label) for label in y])
        return self

    def predict(self, X) -> np.ndarray:
        return np.array([r.decision for r in self.match(X)], dtype=object)

    def match(self, X):
        """Full MatchResult per query row (decision, distance, runner-up)."""
        if not hasattr(self, "gallery_"):
            raise NotFittedError("GalleryMatcher is not fitted; call fit() first")
        X = check_embedding_matrix(X)
        return [self.gallery_.match(row, threshold=self.threshold) for row in X]

    def decision_distances(self, X) -> np.ndarray:
        """Best gallery distance per query (inf when the gallery is empty)."""
        return np.array([r.distance for r in self.match(X)])

    def score(self, X, y) -> float:
        """Fraction of queries whose decision equals the given label."""
        predictions = self.predict(X)
        y = np.asarray([str(label) for label in y], dtype=object)
        return float(np.mean(predictions == y))


UNKNOWN_LABEL = UNKNOWN
