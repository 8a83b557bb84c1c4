"""Shared vocabulary for unrolled sewer-pipe mosaics: classes, boxes, detections."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import UsageError


class DefectClass(str, enum.Enum):
    """Euronorm letter codes for the nine defects and the one structural element."""

    SETTLED_DEPOSIT = "BBC"
    BREAK_COLLAPSE = "BAC"
    DEFORMATION = "BAA"
    OBSTACLE = "BBE"
    ANGULAR_DISPLACED_JOINT = "BAJ-C"
    SURFACE_DAMAGE = "BAF"
    HORIZONTAL_DISPLACED_JOINT = "BAJ-B"
    FISSURE = "BAB"
    ROOT = "BBA"
    CONNECTION = "BCA"

    @property
    def code(self) -> str:
        return self.value

    @property
    def is_structural(self) -> bool:
        return self is DefectClass.CONNECTION

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def parse(cls, text: str | DefectClass) -> DefectClass:
        """Accept a code (``"BAJ-C"``, ``"baj c"``, ``"BAJ_C"``) or member name."""
        if isinstance(text, DefectClass):
            return text
        key = str(text).strip().upper().replace(" ", "-").replace("_", "-")
        for member in cls:
            if key == member.value or key == member.name.replace("_", "-"):
                return member
        raise UsageError(f"unknown defect class code: {text!r}")

    def __str__(self) -> str:
        return self.value


_DISPLAY_NAMES = {
    DefectClass.SETTLED_DEPOSIT: "Settled deposit",
    DefectClass.BREAK_COLLAPSE: "Break/collapse",
    DefectClass.DEFORMATION: "Deformation",
    DefectClass.OBSTACLE: "Obstacle",
    DefectClass.ANGULAR_DISPLACED_JOINT: "Ang. dis. joint",
    DefectClass.SURFACE_DAMAGE: "Surface damage",
    DefectClass.HORIZONTAL_DISPLACED_JOINT: "Hor. dis. joint",
    DefectClass.FISSURE: "Fissure",
    DefectClass.ROOT: "Root",
    DefectClass.CONNECTION: "Connection",
}


class SeverityClass(enum.IntEnum):
    """Condition class of a ground-truth defect, 0 (worst) to 4 (minor)."""

    VERY_SEVERE = 0
    SEVERE = 1
    MEDIUM = 2
    SLIGHT = 3
    MINOR = 4

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", " ")

    @classmethod
    def from_label(cls, label: str) -> SeverityClass:
        return cls[label.strip().upper().replace(" ", "_")]


# connections are not graded; they carry this fixed value
BENIGN_SEVERITY = SeverityClass.MINOR


class Material(str, enum.Enum):
    CONCRETE = "concrete"
    VITRIFIED_CLAY = "vitrified_clay"
    STONE = "stone"
    OTHER = "other"

    @classmethod
    def parse(cls, text: str | Material) -> Material:
        if isinstance(text, Material):
            return text
        try:
            return cls(str(text).strip().lower().replace(" ", "_"))
        except ValueError:
            raise UsageError(f"unknown pipe material: {text!r}") from None


def _require_int(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        # numpy integers are accepted, floats are not
        try:
            import numpy as np

            if isinstance(value, np.integer):
                return int(value)
        except ImportError:  # pragma: no cover
            pass
        raise UsageError(f"{name} must be an integer, got {value!r}")
    return value


@dataclass(frozen=True, slots=True, order=True)
class PixelBox:
    """Half-open integer rectangle ``[x, x+w) x [y, y+h)`` in mosaic pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, _require_int(name, getattr(self, name)))
        if self.w <= 0 or self.h <= 0:
            raise UsageError(f"box width and height must be positive: {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_corners(cls, x1: int, y1: int, x2: int, y2: int) -> PixelBox:
        return cls(x1, y1, x2 - x1, y2 - y1)

    def translate(self, dx: int = 0, dy: int = 0) -> PixelBox:
        return PixelBox(self.x + dx, self.y + dy, self.w, self.h)

    def intersection(self, other: PixelBox) -> PixelBox | None:
        x1, y1 = max(self.x, other.x), max(self.y, other.y)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return PixelBox.from_corners(x1, y1, x2, y2)

    def contains(self, other: PixelBox) -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


@dataclass(frozen=True, slots=True)
class MosaicGeometry:
    """One unrolled pipe: ``width_px`` runs along the axis, ``height_px`` around it."""

    pipe_id: str
    width_px: int
    px_per_meter_axial: float
    height_px: int = 1200
    material: Material = Material.OTHER
    joint_positions_px: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "width_px", _require_int("width_px", self.width_px))
        object.__setattr__(self, "height_px", _require_int("height_px", self.height_px))
        object.__setattr__(self, "material", Material.parse(self.material))
        joints = tuple(_require_int("joint position", j) for j in self.joint_positions_px)
        object.__setattr__(self, "joint_positions_px", joints)
        if self.width_px <= 0 or self.height_px <= 0:
            raise UsageError("mosaic width and height must be positive")
        if not self.px_per_meter_axial > 0:
            raise UsageError("px_per_meter_axial must be > 0")
        for a, b in zip(joints, joints[1:]):
            if b <= a:
                raise UsageError("joint positions must be strictly ascending")
        if joints and (joints[0] < 0 or joints[-1] > self.width_px):
            raise UsageError("joint positions must lie within [0, width_px]")

    @property
    def length_m(self) -> float:
        return self.width_px / self.px_per_meter_axial

    def px_to_m(self, px: float) -> float:
        return px / self.px_per_meter_axial

    def m_to_px(self, meters: float) -> float:
        return meters * self.px_per_meter_axial

    def contains(self, box: PixelBox) -> bool:
        return box.x >= 0 and box.y >= 0 and box.x2 <= self.width_px and box.y2 <= self.height_px


@dataclass(frozen=True, slots=True)
class Detection:
    id: str
    box: PixelBox
    cls: DefectClass
    confidence: float
    merged_from: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cls", DefectClass.parse(self.cls))
        object.__setattr__(self, "merged_from", tuple(self.merged_from))
        object.__setattr__(self, "notes", tuple(self.notes))
        if not 0.0 <= self.confidence <= 1.0:
            raise UsageError(f"confidence must lie in [0, 1], got {self.confidence}")
        if len(set(self.merged_from)) != len(self.merged_from):
            raise UsageError(f"duplicate ids in merged_from of {self.id}")
        if self.id in self.merged_from:
            raise UsageError(f"detection {self.id} lists itself in merged_from")


@dataclass(frozen=True, slots=True)
class Annotation:
    id: str
    box: PixelBox
    cls: DefectClass
    severity: SeverityClass = BENIGN_SEVERITY

    def __post_init__(self):
        object.__setattr__(self, "cls", DefectClass.parse(self.cls))
        if self.severity is None:
            if not self.cls.is_structural:
                raise UsageError(f"annotation {self.id} of class {self.cls} needs a severity")
            object.__setattr__(self, "severity", BENIGN_SEVERITY)
        object.__setattr__(self, "severity", SeverityClass(self.severity))


@dataclass(frozen=True, slots=True)
class CylindricalSpan:
    """A ceiling defect that the planar cut split into a top and a bottom part."""

    top_part: PixelBox
    bottom_part: PixelBox
    cls: DefectClass
    confidence: float
    height_px: int
    source_ids: tuple[str, str] = field(default=("", ""))

    def __post_init__(self):
        object.__setattr__(self, "cls", DefectClass.parse(self.cls))
        if self.top_part.y != 0:
            raise UsageError("top part of a span must touch y = 0")
        if self.bottom_part.y2 != self.height_px:
            raise UsageError("bottom part of a span must touch the lower mosaic edge")
        if not 0.0 <= self.confidence <= 1.0:
            raise UsageError("span confidence must lie in [0, 1]")

    @property
    def id(self) -> str:
        return "~".join(self.source_ids)

    def parts(self) -> list[Detection]:
        """Both halves as flat detections carrying the span confidence."""
        top_id, bottom_id = self.source_ids
        return [
            Detection(top_id or f"{self.id}/top", self.top_part, self.cls, self.confidence),
            Detection(bottom_id or f"{self.id}/bottom", self.bottom_part, self.cls, self.confidence),
        ]


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union with exact integer areas."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def enclosing_box(boxes: Iterable[PixelBox]) -> PixelBox:
    boxes = list(boxes)
    if not boxes:
        raise UsageError("enclosing_box needs at least one box")
    return PixelBox.from_corners(
        min(b.x for b in boxes),
        min(b.y for b in boxes),
        max(b.x2 for b in boxes),
        max(b.y2 for b in boxes),
    )


def axial_overlap_ratio(a: PixelBox, b: PixelBox) -> float:
    """Overlap of the two x-intervals divided by the length of their union."""
    inter = min(a.x2, b.x2) - max(a.x, b.x)
    if inter <= 0:
        return 0.0
    return inter / (max(a.x2, b.x2) - min(a.x, b.x))


def axial_gap_px(a_lo: float, a_hi: float, b_lo: float, b_hi: float) -> float:
    """Distance between two closed intervals along the pipe axis (0 when they touch)."""
    return max(0.0, b_lo - a_hi, a_lo - b_hi)


def boxes_to_array(boxes: Sequence[PixelBox]):
    """``(n, 4)`` int64 array of ``x1, y1, x2, y2`` corners."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.int64)
    return np.array([(b.x, b.y, b.x2, b.y2) for b in boxes], dtype=np.int64)


def iou_matrix(a, b):
    """Pairwise IoU of two box lists (or corner arrays from :func:`boxes_to_array`)."""
    a = a if isinstance(a, np.ndarray) else boxes_to_array(list(a))
    b = b if isinstance(b, np.ndarray) else boxes_to_array(list(b))
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union
