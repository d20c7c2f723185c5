"""Geometric types, YOLO-style label/detection files and IoU.

Boxes live in normalized center format (``cx cy w h`` as fractions of the
image size).  Pixel boxes are half-open rectangles ``[x0, x1) x [y0, y1)``
and only exist transiently for geometry.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

from .errors import InvalidBoxError, ParseError

EPS = 1e-6
DECIMALS = 6


class Origin(str, enum.Enum):
    REAL_NORMAL = "real-normal"
    REAL_DIFFICULT = "real-difficult"
    GEN_REAL = "gen-real"
    GEN_RENDER = "gen-render"
    BACKGROUND_ONLY = "background-only"


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not (-EPS <= v <= 1 + EPS):
                raise InvalidBoxError(f"{name}={v!r} outside [0, 1]")
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"non-positive box size w={self.w!r} h={self.h!r}")
        if self.cx - self.w / 2 < -EPS or self.cx + self.w / 2 > 1 + EPS:
            raise InvalidBoxError(f"box exceeds image horizontally: cx={self.cx!r} w={self.w!r}")
        if self.cy - self.h / 2 < -EPS or self.cy + self.h / 2 > 1 + EPS:
            raise InvalidBoxError(f"box exceeds image vertically: cy={self.cy!r} h={self.h!r}")

    @property
    def corners(self) -> Tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class PixelBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InvalidBoxError(f"degenerate pixel box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def inside(self, width: float, height: float) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    box: BoundingBox

    def __post_init__(self):
        if self.class_id < 0:
            raise InvalidBoxError(f"negative class id {self.class_id}")


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if self.class_id < 0:
            raise InvalidBoxError(f"negative class id {self.class_id}")
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidBoxError(f"confidence {self.confidence!r} outside [0, 1]")


@dataclass(frozen=True)
class ImageEntry:
    path: str
    width: int
    height: int
    ground_truth: Tuple[GroundTruth, ...] = field(default_factory=tuple)
    origin: Origin = Origin.REAL_NORMAL

    def __post_init__(self):
        object.__setattr__(self, "origin", Origin(self.origin))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        if self.origin is Origin.BACKGROUND_ONLY and self.ground_truth:
            raise ValueError(f"background-only entry {self.path} carries annotations")


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union of two half-open pixel rectangles."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    # IoU is invariant to per-axis scaling, so normalized boxes need no image size.
    return iou(PixelBox(*a.corners), PixelBox(*b.corners))


def to_pixel(box: BoundingBox, width: int, height: int) -> PixelBox:
    if width < 1 or height < 1:
        raise InvalidBoxError(f"image size must be positive, got {width}x{height}")
    x0, y0, x1, y1 = box.corners
    x0, x1 = max(0.0, x0 * width), min(float(width), x1 * width)
    y0, y1 = max(0.0, y0 * height), min(float(height), y1 * height)
    return PixelBox(x0, y0, x1, y1)


def from_pixel(pb: PixelBox, width: int, height: int) -> BoundingBox:
    if width < 1 or height < 1:
        raise InvalidBoxError(f"image size must be positive, got {width}x{height}")
    if not pb.inside(width, height):
        raise InvalidBoxError(f"pixel box {pb.as_tuple()} outside {width}x{height} image")
    return BoundingBox(
        (pb.x0 + pb.x1) / 2 / width,
        (pb.y0 + pb.y1) / 2 / height,
        (pb.x1 - pb.x0) / width,
        (pb.y1 - pb.y0) / height,
    )


def _clamp_unit(value: float, name: str, line_no: int) -> float:
    if 0.0 <= value <= 1.0:
        return value
    if -EPS <= value < 0.0:
        return 0.0
    if 1.0 < value <= 1.0 + EPS:
        return 1.0
    raise ParseError(f"{name}={value!r} outside [0, 1]", line_no)


def _parse_lines(text: str, n_fields: int) -> Iterable[Tuple[int, int, BoundingBox, List[float]]]:
    for line_no, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != n_fields:
            raise ParseError(f"expected {n_fields} fields, got {len(parts)}", line_no)
        try:
            class_id = int(parts[0])
        except ValueError:
            raise ParseError(f"class id {parts[0]!r} is not an integer", line_no) from None
        if class_id < 0:
            raise ParseError(f"negative class id {class_id}", line_no)
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", line_no) from None
        names = ("cx", "cy", "w", "h", "confidence")
        values = [_clamp_unit(v, names[i], line_no) for i, v in enumerate(values)]
        try:
            box = BoundingBox(*values[:4])
        except InvalidBoxError as exc:
            raise ParseError(str(exc), line_no) from None
        yield line_no, class_id, box, values[4:]


def parse_label_file(text: str) -> List[GroundTruth]:
    """Parse ``class cx cy w h`` lines; blank lines are skipped."""
    return [GroundTruth(cid, box) for _, cid, box, _ in _parse_lines(text, 5)]


def parse_detection_file(text: str) -> List[Detection]:
    """Parse ``class cx cy w h confidence`` lines."""
    return [Detection(cid, box, extra[0]) for _, cid, box, extra in _parse_lines(text, 6)]


def _fmt_box(class_id: int, box: BoundingBox) -> str:
    if not isinstance(box, BoundingBox):
        raise InvalidBoxError(f"not a BoundingBox: {box!r}")
    # Re-run validation: a box built with object.__setattr__ tricks must not slip through.
    BoundingBox(box.cx, box.cy, box.w, box.h)
    if round(box.w, DECIMALS) <= 0 or round(box.h, DECIMALS) <= 0:
        raise InvalidBoxError(f"box {box} too small for {DECIMALS}-decimal serialization")
    vals = " ".join(f"{v:.{DECIMALS}f}" for v in (box.cx, box.cy, box.w, box.h))
    return f"{class_id} {vals}"


def write_label_file(items: Sequence[GroundTruth]) -> str:
    return "\n".join(_fmt_box(gt.class_id, gt.box) for gt in items)


def write_detection_file(items: Sequence[Detection]) -> str:
    lines = []
    for det in items:
        if not (0.0 <= det.confidence <= 1.0):
            raise InvalidBoxError(f"confidence {det.confidence!r} outside [0, 1]")
        lines.append(f"{_fmt_box(det.class_id, det.box)} {det.confidence:.{DECIMALS}f}")
    return "\n".join(lines)
