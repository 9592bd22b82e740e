"""Face detector post-processing: head decode, NMS, cropping.

Raw detector heads are (3, S, S, 5 + C) tensors per layer, three layers at
strides 8/16/32 with three anchors each. Channels are center x, center y,
width, height, objectness, then per-class scores, all as logits. Decode
follows the v5-family convention:

    bx = (2 sigm(tx) - 0.5 + j) * stride      bw = aw * (2 sigm(tw))^2
    by = (2 sigm(ty) - 0.5 + i) * stride      bh = ah * (2 sigm(th))^2

Confidence fuses objectness with the best class probability; suppression
is class-aware (mask and no_mask never suppress each other).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from maskver.geometry import BoundingBox, from_network, iou
from maskver.inference import ModelHandle, TensorSpec, image_to_network_tensor


class DetectionClass(enum.Enum):
    mask = 0
    no_mask = 1

    @classmethod
    def from_name(cls, name: str) -> "DetectionClass":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown detection class '{name}'") from None


NUM_CLASSES = len(DetectionClass)
HEAD_CHANNELS = 5 + NUM_CLASSES

# v5-family published anchors for 640 inputs, one row per detection layer.
DEFAULT_ANCHORS = (
    ((10, 13), (16, 30), (33, 23)),
    ((30, 61), (62, 45), (59, 119)),
    ((116, 90), (156, 198), (373, 326)),
)
DEFAULT_STRIDES = (8, 16, 32)


@dataclass(frozen=True)
class AnchorSet:
    """Three anchors (w, h) per detection layer plus the layer strides."""

    anchors: tuple = DEFAULT_ANCHORS
    strides: tuple = DEFAULT_STRIDES

    def __post_init__(self):
        if len(self.anchors) != len(self.strides):
            raise ValueError("one anchor row per stride required")
        if any(len(row) != 3 for row in self.anchors):
            raise ValueError("exactly three anchors per detection layer")
        if list(self.strides) != sorted(set(self.strides)):
            raise ValueError("strides must be strictly increasing")

    def layer_for_stride(self, stride: int) -> int:
        try:
            return self.strides.index(stride)
        except ValueError:
            raise ValueError(f"no detection layer with stride {stride}") from None


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    label: DetectionClass
    confidence: float

    def to_json(self) -> dict:
        return {
            "box": {"x1": self.box.x1, "y1": self.box.y1,
                    "x2": self.box.x2, "y2": self.box.y2},
            "class": self.label.name,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class DetectorConfig:
    confidence_threshold: float = 0.25
    nms_iou_threshold: float = 0.45
    input_size: int = 640
    max_detections: int = 300

    def __post_init__(self):
        if not 0 < self.confidence_threshold < 1:
            raise ValueError("confidence_threshold must lie in (0, 1)")
        if not 0 < self.nms_iou_threshold < 1:
            raise ValueError("nms_iou_threshold must lie in (0, 1)")
        if self.input_size % 32 != 0:
            raise ValueError("input_size must be divisible by 32")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def decode_layer(raw: np.ndarray, anchors, stride: int,
                 conf_threshold: float) -> list[Detection]:
    """Decode one head layer into candidate detections in network coordinates."""
    raw = np.asarray(raw, dtype=np.float64)
    grid = raw.shape[1]
    if raw.shape != (len(anchors), grid, grid, HEAD_CHANNELS):
        raise ValueError(
            f"head tensor shape {raw.shape} != "
            f"({len(anchors)}, S, S, {HEAD_CHANNELS})")
    sig = _sigmoid(raw)
    class_probs = sig[..., 5:]
    best_class = class_probs.argmax(axis=-1)
    confidence = sig[..., 4] * class_probs.max(axis=-1)
    keep = confidence >= conf_threshold
    detections = []
    for a, i, j in zip(*np.nonzero(keep)):
        aw, ah = anchors[a]
        bx = (2.0 * sig[a, i, j, 0] - 0.5 + j) * stride
        by = (2.0 * sig[a, i, j, 1] - 0.5 + i) * stride
        bw = aw * (2.0 * sig[a, i, j, 2]) ** 2
        bh = ah * (2.0 * sig[a, i, j, 3]) ** 2
        detections.append(Detection(
            box=BoundingBox(bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2),
            label=DetectionClass(int(best_class[a, i, j])),
            confidence=float(confidence[a, i, j]),
        ))
    return detections


def decode_flat(pred: np.ndarray, conf_threshold: float) -> list[Detection]:
    """Decode an already-sigmoided (N, 5+C) prediction grid (cx cy w h obj c...)."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] != HEAD_CHANNELS:
        raise ValueError(f"flat predictions must be (N, {HEAD_CHANNELS}), got {pred.shape}")
    class_probs = pred[:, 5:]
    confidence = pred[:, 4] * class_probs.max(axis=1)
    best_class = class_probs.argmax(axis=1)
    detections = []
    for idx in np.nonzero(confidence >= conf_threshold)[0]:
        cx, cy, w, h = pred[idx, :4]
        detections.append(Detection(
            box=BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
            label=DetectionClass(int(best_class[idx])),
            confidence=float(confidence[idx]),
        ))
    return detections


def encode_box(box: BoundingBox, label: DetectionClass, confidence: float,
               anchor_set: AnchorSet, input_size: int = 640,
               class_logit: float = 15.0):
    """Invert the decode equations for a box within anchor dynamic range.

    Returns (layer, anchor index, i, j, channel logits). Raises when no
    anchor can express the size (ratio outside (0, 4)) or the center falls
    outside the grid.
    """
    cx, cy = box.center
    w, h = box.width, box.height
    if not (0 <= cx < input_size and 0 <= cy < input_size):
        raise ValueError(f"box center ({cx}, {cy}) outside network input")
    best = None
    for layer, (stride, anchors) in enumerate(zip(anchor_set.strides,
                                                  anchor_set.anchors)):
        for a, (aw, ah) in enumerate(anchors):
            rw, rh = w / aw, h / ah
            if not (0 < rw < 4 and 0 < rh < 4):
                continue
            badness = abs(math.log(rw)) + abs(math.log(rh))
            if best is None or badness < best[0]:
                best = (badness, layer, a, stride, aw, ah)
    if best is None:
        raise ValueError(f"box of size {w:.1f}x{h:.1f} outside anchor dynamic range")
    _, layer, a, stride, aw, ah = best
    grid = input_size // stride
    j = min(int(cx // stride), grid - 1)
    i = min(int(cy // stride), grid - 1)
    dx = cx / stride - j
    dy = cy / stride - i
    sig_max = 1.0 / (1.0 + math.exp(-class_logit))
    if not 0 < confidence < sig_max:
        raise ValueError(f"confidence {confidence} not encodable (limit {sig_max})")
    logits = np.full(HEAD_CHANNELS, -class_logit, dtype=np.float64)
    logits[0] = _logit((dx + 0.5) / 2.0)
    logits[1] = _logit((dy + 0.5) / 2.0)
    logits[2] = _logit(math.sqrt(w / aw) / 2.0)
    logits[3] = _logit(math.sqrt(h / ah) / 2.0)
    logits[4] = _logit(confidence / sig_max)
    logits[5 + label.value] = class_logit
    return layer, a, i, j, logits


def build_head_outputs(faces, anchor_set: AnchorSet | None = None,
                       input_size: int = 640, background_logit: float = -20.0,
                       dtype=np.float32) -> list[np.ndarray]:
    """Synthesize raw head tensors containing the given (box, label, confidence)."""
    anchor_set = anchor_set or AnchorSet()
    heads = [
        np.full((3, input_size // s, input_size // s, HEAD_CHANNELS),
                background_logit, dtype=dtype)
        for s in anchor_set.strides
    ]
    for box, label, confidence in faces:
        layer, a, i, j, logits = encode_box(box, label, confidence,
                                            anchor_set, input_size)
        heads[layer][a, i, j] = logits.astype(dtype)
    return heads


def _nms_sort_key(d: Detection):
    # confidence desc, then larger area, then lower x1 -- deterministic ties
    return (-d.confidence, -d.box.area, d.box.x1)


def nms(candidates: list[Detection], iou_threshold: float,
        max_detections: int = 300) -> list[Detection]:
    """Greedy class-aware suppression; output stays confidence-descending."""
    pending = sorted(candidates, key=_nms_sort_key)
    kept: list[Detection] = []
    for cand in pending:
        if len(kept) >= max_detections:
            break
        suppressed = any(
            k.label == cand.label and iou(k.box, cand.box) > iou_threshold
            for k in kept
        )
        if not suppressed:
            kept.append(cand)
    return kept


def detect_faces(frame: np.ndarray, model: ModelHandle,
                 cfg: DetectorConfig | None = None,
                 anchor_set: AnchorSet | None = None) -> list[Detection]:
    """Full post-processing pipeline from an RGB frame to source-frame detections."""
    cfg = cfg or DetectorConfig()
    anchor_set = anchor_set or AnchorSet()
    tensor, transform = image_to_network_tensor(frame, cfg.input_size)
    outputs = model.run({model.input_specs[0].name: tensor})
    candidates: list[Detection] = []
    for array in outputs.values():
        array = np.asarray(array)
        if array.ndim == 5 and array.shape[0] == 1:
            array = array[0]
        if array.ndim == 4 and array.shape[-1] == HEAD_CHANNELS:
            stride = cfg.input_size // array.shape[1]
            layer = anchor_set.layer_for_stride(stride)
            candidates.extend(decode_layer(
                array, anchor_set.anchors[layer], stride,
                cfg.confidence_threshold))
        elif array.ndim == 3 and array.shape[0] == 1 \
                and array.shape[-1] == HEAD_CHANNELS:
            candidates.extend(decode_flat(array[0], cfg.confidence_threshold))
    kept = nms(candidates, cfg.nms_iou_threshold, cfg.max_detections)
    return [
        Detection(from_network(d.box, transform), d.label, d.confidence)
        for d in kept
    ]


def crop_face(frame: np.ndarray, detection: Detection,
              margin_fraction: float = 0.1, out_size: int = 64) -> np.ndarray:
    """Cut the detected face out of the frame, with margin, resized square."""
    h, w = frame.shape[:2]
    box = detection.box
    mx = box.width * margin_fraction
    my = box.height * margin_fraction
    expanded = BoundingBox(box.x1 - mx, box.y1 - my,
                           box.x2 + mx, box.y2 + my).clamp(w, h)
    x1, y1 = int(math.floor(expanded.x1)), int(math.floor(expanded.y1))
    x2, y2 = int(math.ceil(expanded.x2)), int(math.ceil(expanded.y2))
    if x2 <= x1 or y2 <= y1:
        raise ValueError("detection box does not intersect the frame")
    crop = frame[y1:y2, x1:x2]
    return cv2.resize(crop, (out_size, out_size), interpolation=cv2.INTER_LINEAR)


def chip_to_tensor(chip: np.ndarray) -> np.ndarray:
    """Convert an 8-bit RGB chip to a channel-first float tensor in [0, 1]."""
    return chip.astype(np.float32).transpose(2, 0, 1) / 255.0


class StubDetectorModel(ModelHandle):
    """Content-independent detector stub emitting fixed head tensors.

    Used for desk-scale tests and offline runs without real weights; the
    faces it reports are given in network-input coordinates and travel
    through the regular decode/NMS/unmap pipeline.
    """

    def __init__(self, faces, input_size: int = 640,
                 anchor_set: AnchorSet | None = None,
                 identifier: str = "stub-detector"):
        anchor_set = anchor_set or AnchorSet()
        self.faces = list(faces)
        self.heads = build_head_outputs(self.faces, anchor_set, input_size)
        input_specs = [TensorSpec("images", (1, 3, input_size, input_size))]
        output_specs = [
            TensorSpec(f"head{s}", (1,) + head.shape)
            for s, head in zip(anchor_set.strides, self.heads)
        ]
        super().__init__(identifier, input_specs, output_specs)

    def _execute(self, inputs, batch):
        return {spec.name: head[None]
                for spec, head in zip(self.output_specs, self.heads)}

    @classmethod
    def from_file(cls, path: str | Path) -> "StubDetectorModel":
        with open(path) as fh:
            payload = json.load(fh)
        faces = [
            (BoundingBox(*entry["box"]),
             DetectionClass.from_name(entry["class"]),
             float(entry["confidence"]))
            for entry in payload.get("faces", [])
        ]
        return cls(faces, input_size=int(payload.get("input_size", 640)),
                   identifier=str(path))

    def to_file(self, path: str | Path) -> None:
        payload = {
            "kind": "stub_detector",
            "input_size": self.input_specs[0].shape[-1],
            "faces": [
                {"box": list(box.as_tuple()), "class": label.name,
                 "confidence": confidence}
                for box, label, confidence in self.faces
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=2))


def load_sidecar_metadata(path: str | Path) -> tuple[AnchorSet, list[str]]:
    """Parse a model's sidecar key-value metadata (anchors, strides, classes)."""
    strides = DEFAULT_STRIDES
    anchors = DEFAULT_ANCHORS
    classes = [c.name for c in DetectionClass]
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        key = key.strip().lower()
        value = value.strip()
        try:
            if key == "strides":
                strides = tuple(int(v) for v in value.split())
            elif key == "anchors":
                anchors = tuple(
                    tuple(tuple(float(x) for x in pair.split(","))
                          for pair in layer.split())
                    for layer in value.split(";")
                )
            elif key == "classes":
                classes = value.split()
            else:
                raise ValueError(f"unknown key '{key}'")
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return AnchorSet(anchors=anchors, strides=strides), classes


def sidecar_for(model_path: str | Path) -> AnchorSet:
    """Anchor set for a model file, honoring an optional .meta sidecar."""
    sidecar = Path(model_path).with_suffix(".meta")
    if sidecar.exists():
        anchor_set, _ = load_sidecar_metadata(sidecar)
        return anchor_set
    return AnchorSet()
