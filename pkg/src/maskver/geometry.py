"""Axis-aligned box arithmetic, overlap metrics, and letterbox coordinate maps.

Boxes use the corner convention (x1, y1, x2, y2) in pixels; center/size
views are derived. All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle in pixels, corners ordered on construction."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        x1, x2 = sorted((float(self.x1), float(self.x2)))
        y1, y2 = sorted((float(self.y1), float(self.y2)))
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.x1, self.y1, self.x2, self.y2

    def clamp(self, max_w: float, max_h: float) -> "BoundingBox":
        """Clip the box to the rectangle [0, max_w] x [0, max_h]."""
        return BoundingBox(
            min(max(self.x1, 0.0), max_w),
            min(max(self.y1, 0.0), max_h),
            min(max(self.x2, 0.0), max_w),
            min(max(self.y2, 0.0), max_h),
        )


@dataclass(frozen=True)
class LetterboxTransform:
    """Aspect-preserving map from a source frame onto a square network input.

    scale = min(dst/src_w, dst/src_h); the scaled frame is centered with
    symmetric padding pad_x, pad_y.
    """

    scale: float
    pad_x: float
    pad_y: float
    src_w: int
    src_h: int
    dst: int


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union has zero area."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def aspect_consistency(a: BoundingBox, b: BoundingBox) -> float:
    """Aspect-ratio consistency term: (4/pi^2)(arctan(w_b/h_b) - arctan(w_a/h_a))^2.

    Lies in [0, 1]; 0 when the aspect ratios agree.
    """
    if a.height <= 0.0 or b.height <= 0.0:
        raise ValueError("aspect_consistency requires boxes with positive height")
    diff = math.atan(b.width / b.height) - math.atan(a.width / a.height)
    return (4.0 / math.pi**2) * diff * diff


def ciou(a: BoundingBox, b: BoundingBox) -> float:
    """Complete-IoU similarity: IoU - rho^2/c^2 - alpha*upsilon.

    rho^2 is the squared distance between box centers and c^2 the squared
    diagonal of the smallest enclosing box; alpha = v / ((1 - IoU) + v),
    taken as 0 in the 0/0 case (identical boxes), which keeps ciou(a, a) = 1.
    """
    if a.area <= 0.0 or b.area <= 0.0:
        raise ValueError("ciou requires boxes with positive area")
    overlap = iou(a, b)
    ax, ay = a.center
    bx, by = b.center
    rho2 = (ax - bx) ** 2 + (ay - by) ** 2
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    c2 = cw * cw + ch * ch
    v = aspect_consistency(a, b)
    denom = (1.0 - overlap) + v
    alpha = 0.0 if denom == 0.0 else v / denom
    return overlap - (rho2 / c2 + alpha * v)


def letterbox_for(src_w: int, src_h: int, dst: int = 640) -> LetterboxTransform:
    """Build the transform that fits a src_w x src_h frame into dst x dst."""
    if src_w <= 0 or src_h <= 0 or dst <= 0:
        raise ValueError(f"dimensions must be positive, got {src_w}x{src_h} -> {dst}")
    scale = min(dst / src_w, dst / src_h)
    pad_x = (dst - scale * src_w) / 2.0
    pad_y = (dst - scale * src_h) / 2.0
    return LetterboxTransform(scale, pad_x, pad_y, src_w, src_h, dst)


def to_network(box: BoundingBox, t: LetterboxTransform) -> BoundingBox:
    """Map a source-frame box into network-input coordinates."""
    return BoundingBox(
        box.x1 * t.scale + t.pad_x,
        box.y1 * t.scale + t.pad_y,
        box.x2 * t.scale + t.pad_x,
        box.y2 * t.scale + t.pad_y,
    )


def from_network(box: BoundingBox, t: LetterboxTransform) -> BoundingBox:
    """Map a network-coordinate box back to the source frame, clamped to it."""
    unpadded = BoundingBox(
        (box.x1 - t.pad_x) / t.scale,
        (box.y1 - t.pad_y) / t.scale,
        (box.x2 - t.pad_x) / t.scale,
        (box.y2 - t.pad_y) / t.scale,
    )
    return unpadded.clamp(float(t.src_w), float(t.src_h))
