"""Box algebra: IoU, the six invertible view transforms, averaging and extents.

All boxes are axis-aligned rectangles in absolute pixel coordinates with the
origin at the top-left, stored corner-form (x_min, y_min, x_max, y_max).
Everything here is a pure function; nothing touches I/O.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with strictly positive area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ValueError(f"box coordinate {name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(
                f"box must have positive area: ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class ImageDims:
    """Pixel dimensions of the original image frame."""

    width: float
    height: float

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"image {name} must be a positive finite number, got {v!r}")


class TransformKind(str, enum.Enum):
    """The six invertible augmentation views.

    The enum value doubles as the on-disk view tag in ``detections.ndjson``.
    """

    IDENTITY = "identity"
    HFLIP = "hflip"
    VFLIP = "vflip"
    UPSCALE_HFLIP = "upscale_hflip"
    UPSCALE_VFLIP = "upscale_vflip"
    DOWNSCALE = "downscale"


ALL_VIEWS: tuple[TransformKind, ...] = tuple(TransformKind)


@dataclass(frozen=True)
class ScaleFactors:
    """Scale factors for the scaled views; flips are factor 1."""

    up: float = 1.5
    down: float = 0.75

    def __post_init__(self):
        if not (math.isfinite(self.up) and self.up > 1):
            raise ValueError(f"up factor must be finite and > 1, got {self.up!r}")
        if not (math.isfinite(self.down) and 0 < self.down < 1):
            raise ValueError(f"down factor must be finite and in (0, 1), got {self.down!r}")


DEFAULT_FACTORS = ScaleFactors()


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint.

    Boxes touching only at an edge have intersection area 0 and therefore
    IoU 0.
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def scale_of(kind: TransformKind, factors: ScaleFactors = DEFAULT_FACTORS) -> float:
    if kind in (TransformKind.UPSCALE_HFLIP, TransformKind.UPSCALE_VFLIP):
        return factors.up
    if kind is TransformKind.DOWNSCALE:
        return factors.down
    return 1.0


def view_dims(
    kind: TransformKind, dims: ImageDims, factors: ScaleFactors = DEFAULT_FACTORS
) -> ImageDims:
    """Dimensions of the transformed image frame."""
    s = scale_of(kind, factors)
    return ImageDims(dims.width * s, dims.height * s)


def _check_inside(box: Box, dims: ImageDims):
    if box.x_min < 0 or box.y_min < 0 or box.x_max > dims.width or box.y_max > dims.height:
        raise ValueError(
            f"box {box.as_tuple()} lies outside the {dims.width}x{dims.height} image"
        )


def to_view(
    box: Box,
    kind: TransformKind,
    dims: ImageDims,
    factors: ScaleFactors = DEFAULT_FACTORS,
) -> Box:
    """Map a box from original-image coordinates into a transformed view.

    Composite views scale first, then flip inside the scaled frame.
    """
    _check_inside(box, dims)
    s = scale_of(kind, factors)
    x0, y0, x1, y1 = box.x_min * s, box.y_min * s, box.x_max * s, box.y_max * s
    w, h = dims.width * s, dims.height * s
    if kind in (TransformKind.HFLIP, TransformKind.UPSCALE_HFLIP):
        x0, x1 = w - x1, w - x0
    elif kind in (TransformKind.VFLIP, TransformKind.UPSCALE_VFLIP):
        y0, y1 = h - y1, h - y0
    return Box(x0, y0, x1, y1)


def from_view(
    box: Box,
    kind: TransformKind,
    dims: ImageDims,
    factors: ScaleFactors = DEFAULT_FACTORS,
) -> Box:
    """Exact inverse of :func:`to_view`: un-flip in the scaled frame, un-scale.

    ``dims`` are always the ORIGINAL image dimensions.
    """
    s = scale_of(kind, factors)
    w, h = dims.width * s, dims.height * s
    _check_inside(box, ImageDims(w, h))
    x0, y0, x1, y1 = box.as_tuple()
    if kind in (TransformKind.HFLIP, TransformKind.UPSCALE_HFLIP):
        x0, x1 = w - x1, w - x0
    elif kind in (TransformKind.VFLIP, TransformKind.UPSCALE_VFLIP):
        y0, y1 = h - y1, h - y0
    if s != 1.0:
        x0, y0, x1, y1 = x0 / s, y0 / s, x1 / s, y1 / s
    return Box(x0, y0, x1, y1)


def average_boxes(boxes: Sequence[Box] | Iterable[Box]) -> Box:
    """Per-coordinate arithmetic mean of one or more boxes."""
    boxes = list(boxes)
    if not boxes:
        raise ValueError("average_boxes requires at least one box")
    n = len(boxes)
    return Box(
        sum(b.x_min for b in boxes) / n,
        sum(b.y_min for b in boxes) / n,
        sum(b.x_max for b in boxes) / n,
        sum(b.y_max for b in boxes) / n,
    )


def merge_extents(boxes: Sequence[Box] | Iterable[Box]) -> Box:
    """Envelope of one or more boxes: coordinate-wise min/max."""
    boxes = list(boxes)
    if not boxes:
        raise ValueError("merge_extents requires at least one box")
    return Box(
        min(b.x_min for b in boxes),
        min(b.y_min for b in boxes),
        max(b.x_max for b in boxes),
        max(b.y_max for b in boxes),
    )
