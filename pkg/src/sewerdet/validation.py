"""Input checks in the spirit of ``sklearn.utils.validation``.

Each helper returns the validated (possibly normalized) value or raises
:class:`~sewerdet.exceptions.UsageError`.
"""
from __future__ import annotations

import math
from collections.abc import Iterable

from .core import Annotation, Detection, MosaicGeometry, PixelBox
from .exceptions import UsageError


def check_positive(value, name: str, *, integer: bool = False):
    if integer:
        if isinstance(value, bool) or int(value) != value:
            raise UsageError(f"{name} must be an integer, got {value!r}")
        value = int(value)
    if not (isinstance(value, (int, float)) or hasattr(value, "__float__")) or not value > 0:
        raise UsageError(f"{name} must be > 0, got {value!r}")
    return value


def check_fraction(value, name: str, *, low_open: bool = False, high_open: bool = False) -> float:
    """Check ``value`` lies in [0, 1] with optionally open ends."""
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name} must be a number, got {value!r}") from None
    if math.isnan(v):
        raise UsageError(f"{name} is NaN")
    lo_ok = v > 0 if low_open else v >= 0
    hi_ok = v < 1 if high_open else v <= 1
    if not (lo_ok and hi_ok):
        lo = "(0" if low_open else "[0"
        hi = "1)" if high_open else "1]"
        raise UsageError(f"{name} must lie in {lo}, {hi}, got {value!r}")
    return v


def check_iou_threshold(value, name: str = "iou_threshold") -> float:
    return check_fraction(value, name, low_open=True)


def check_detections(detections: Iterable, geometry: MosaicGeometry | None = None) -> list[Detection]:
    dets = list(detections)
    seen = set()
    for d in dets:
        if not isinstance(d, Detection):
            raise UsageError(f"expected Detection, got {type(d).__name__}")
        if d.id in seen:
            raise UsageError(f"duplicate detection id {d.id!r}")
        seen.add(d.id)
        if geometry is not None:
            check_box_in_geometry(d.box, geometry, what=f"detection {d.id}")
    return dets


def check_annotations(annotations: Iterable, geometry: MosaicGeometry | None = None) -> list[Annotation]:
    anns = list(annotations)
    seen = set()
    for a in anns:
        if not isinstance(a, Annotation):
            raise UsageError(f"expected Annotation, got {type(a).__name__}")
        if a.id in seen:
            raise UsageError(f"duplicate annotation id {a.id!r}")
        seen.add(a.id)
        if geometry is not None:
            check_box_in_geometry(a.box, geometry, what=f"annotation {a.id}")
    return anns


def check_box_in_geometry(box: PixelBox, geometry: MosaicGeometry, what: str = "box") -> PixelBox:
    if not geometry.contains(box):
        raise UsageError(
            f"{what} {box.as_list()} exceeds mosaic {geometry.pipe_id!r} "
            f"({geometry.width_px}x{geometry.height_px})"
        )
    return box
