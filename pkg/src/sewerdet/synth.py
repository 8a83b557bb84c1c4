"""Seeded synthetic pipes, annotations and simulated detector output.

Default rates and box sizes are fixture conventions chosen to exercise
every code path; they make no claim about real sewer networks.
"""
from __future__ import annotations

import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .core import (
    Annotation,
    DefectClass,
    Detection,
    Material,
    MosaicGeometry,
    PixelBox,
    SeverityClass,
    BENIGN_SEVERITY,
)
from .exceptions import UsageError
from .validation import check_fraction, check_positive

C = DefectClass

DEFAULT_RATES = {  # expected defects per 100 m
    C.FISSURE: 12.0,
    C.ROOT: 6.0,
    C.SURFACE_DAMAGE: 6.0,
    C.CONNECTION: 8.0,
    C.SETTLED_DEPOSIT: 3.0,
    C.OBSTACLE: 3.0,
    C.ANGULAR_DISPLACED_JOINT: 2.0,
    C.HORIZONTAL_DISPLACED_JOINT: 2.0,
    C.BREAK_COLLAPSE: 1.0,
    C.DEFORMATION: 1.0,
}

# (min, max) width and height in px for single-box classes
DEFAULT_SIZES = {
    C.CONNECTION: ((150, 350), (150, 350)),
    C.SETTLED_DEPOSIT: ((300, 1200), (100, 300)),
    C.OBSTACLE: ((100, 400), (100, 400)),
    C.ANGULAR_DISPLACED_JOINT: ((40, 120), (400, 1100)),
    C.HORIZONTAL_DISPLACED_JOINT: ((40, 120), (400, 1100)),
    C.BREAK_COLLAPSE: ((200, 600), (200, 600)),
    C.DEFORMATION: ((300, 900), (300, 900)),
}

CLUSTER_CLASSES = (C.FISSURE, C.ROOT, C.SURFACE_DAMAGE)


@dataclass(frozen=True)
class ClusterParams:
    """Fine labeling: one defect cluster becomes a chain of adjacent sub-boxes."""

    count_range: tuple[int, int] = (1, 5)
    size_range: tuple[int, int] = (40, 160)
    spread_px: int = 60  # max vertical jitter between neighbouring sub-boxes

    def __post_init__(self):
        lo, hi = self.count_range
        if lo < 1 or hi < lo:
            raise UsageError("cluster sub-box count range must satisfy 1 <= min <= max")
        slo, shi = self.size_range
        if slo < 1 or shi < slo:
            raise UsageError("cluster sub-box size range must satisfy 1 <= min <= max")
        if self.spread_px < 0:
            raise UsageError("cluster spread must be >= 0")


@dataclass(frozen=True)
class PipeSpec:
    length_m: float = 50.0
    px_per_meter_axial: float = 1000.0
    material: Material = Material.CONCRETE
    joint_spacing_m: float = 2.5
    height_px: int = 1200
    rates_per_100m: Mapping[DefectClass, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    cluster: Mapping[DefectClass, ClusterParams] = field(
        default_factory=lambda: {c: ClusterParams() for c in CLUSTER_CLASSES}
    )
    root_max_distance_m: float = 0.5
    severity_model: str = "area"  # or "weights"
    severity_weights: tuple[float, ...] = (0.02, 0.08, 0.3, 0.3, 0.3)
    pipe_id: str = "pipe"

    def __post_init__(self):
        check_positive(self.length_m, "length_m")
        check_positive(self.px_per_meter_axial, "px_per_meter_axial")
        check_positive(self.joint_spacing_m, "joint_spacing_m")
        object.__setattr__(self, "material", Material.parse(self.material))
        rates = {DefectClass.parse(k): float(v) for k, v in dict(self.rates_per_100m).items()}
        if any(v < 0 for v in rates.values()):
            raise UsageError("defect rates must be >= 0")
        object.__setattr__(self, "rates_per_100m", rates)
        cluster = {DefectClass.parse(k): (v if isinstance(v, ClusterParams) else ClusterParams(**v))
                   for k, v in dict(self.cluster).items()}
        object.__setattr__(self, "cluster", cluster)
        if self.severity_model not in ("area", "weights"):
            raise UsageError("severity_model must be 'area' or 'weights'")
        if len(self.severity_weights) != 5 or min(self.severity_weights) < 0 or sum(self.severity_weights) <= 0:
            raise UsageError("severity_weights needs five non-negative weights")

    @property
    def width_px(self) -> int:
        return max(1, round(self.length_m * self.px_per_meter_axial))


@dataclass(frozen=True)
class DetectorProfile:
    detect_probability: Mapping[DefectClass, float] | float = 0.8
    center_sigma_px: float = 8.0
    size_sigma_px: float = 8.0
    duplicate_probability: float = 0.1
    duplicate_count: int = 1
    false_positives_per_100m: Mapping[DefectClass, float] | float = 1.0
    tp_confidence: tuple[float, float] | None = (6.0, 2.0)  # Beta(a, b); None means 1.0
    fp_confidence: tuple[float, float] = (2.0, 5.0)
    seam_split: bool = False
    seam_shift_probability: float = 0.0

    def __post_init__(self):
        if isinstance(self.detect_probability, Mapping):
            p = {DefectClass.parse(k): check_fraction(v, "detect probability")
                 for k, v in self.detect_probability.items()}
        else:
            p = {c: check_fraction(self.detect_probability, "detect probability") for c in DefectClass}
        object.__setattr__(self, "detect_probability", p)
        if isinstance(self.false_positives_per_100m, Mapping):
            fp = {DefectClass.parse(k): float(v) for k, v in self.false_positives_per_100m.items()}
        else:
            fp = {c: float(self.false_positives_per_100m) for c in DefectClass}
        if any(v < 0 for v in fp.values()):
            raise UsageError("false positive rates must be >= 0")
        object.__setattr__(self, "false_positives_per_100m", fp)
        if self.center_sigma_px < 0 or self.size_sigma_px < 0:
            raise UsageError("jitter sigmas must be >= 0")
        check_fraction(self.duplicate_probability, "duplicate_probability")
        check_fraction(self.seam_shift_probability, "seam_shift_probability")
        if self.duplicate_count < 0:
            raise UsageError("duplicate_count must be >= 0")

    @classmethod
    def perfect(cls) -> DetectorProfile:
        return cls(detect_probability=1.0, center_sigma_px=0.0, size_sigma_px=0.0,
                   duplicate_probability=0.0, false_positives_per_100m=0.0,
                   tp_confidence=None, seam_split=False)


class _Occupancy:
    """Same-class boxes bucketed along the axis for fast overlap rejection."""

    def __init__(self, bucket_px: int = 2048):
        self.bucket = bucket_px
        self.cells = defaultdict(list)

    def _keys(self, b: PixelBox):
        return range(b.x // self.bucket, (b.x2 - 1) // self.bucket + 1)

    def overlaps(self, b: PixelBox) -> bool:
        return any(b.intersection(o) is not None for k in self._keys(b) for o in self.cells[k])

    def add(self, b: PixelBox) -> None:
        for k in self._keys(b):
            self.cells[k].append(b)


def _rand_int(rng, lo, hi) -> int:
    return int(rng.integers(lo, hi + 1))


def _severity(rng, spec: PipeSpec, box: PixelBox, cls: DefectClass) -> SeverityClass:
    if cls.is_structural:
        return BENIGN_SEVERITY
    if spec.severity_model == "weights":
        w = np.asarray(spec.severity_weights, dtype=float)
        return SeverityClass(int(rng.choice(5, p=w / w.sum())))
    # larger defects tend to be graded more severe
    area_score = min(1.0, box.area / (0.25 * spec.height_px ** 2))
    s = 0.5 * area_score + 0.5 * rng.random()
    return SeverityClass(min(4, int((1.0 - s) * 5)))


def generate_pipe(spec: PipeSpec, seed: int = 0) -> tuple[MosaicGeometry, list[Annotation]]:
    """Seeded pipe geometry with ground truth.

    Per class the number of defects is Poisson(rate * length / 100). Cluster
    classes expand into chains of edge-adjacent sub-boxes, each its own
    annotation. Roots are placed within ``root_max_distance_m`` of a joint or
    connection. Same-class boxes never overlap and no box touches the upper
    or lower mosaic edge. Placements that cannot avoid overlap after a few
    retries are dropped.
    """
    if not spec.length_m > 0:
        raise UsageError("pipe length must be > 0")
    rng = np.random.default_rng(seed)
    width, height = spec.width_px, spec.height_px
    spacing = spec.joint_spacing_m * spec.px_per_meter_axial
    joints = tuple(int(round(k * spacing)) for k in range(1, int(width // spacing) + 1)
                   if round(k * spacing) < width)
    geometry = MosaicGeometry(spec.pipe_id, width, spec.px_per_meter_axial, height,
                              spec.material, joints)
    occupancy = defaultdict(_Occupancy)
    annotations: list[Annotation] = []
    counter = [0]

    def place(cls: DefectClass, box: PixelBox) -> bool:
        if box.x < 0 or box.x2 > width or box.y < 1 or box.y2 > height - 1:
            return False
        if occupancy[cls].overlaps(box):
            return False
        occupancy[cls].add(box)
        annotations.append(Annotation(f"{spec.pipe_id}-a{counter[0]:05d}", box, cls,
                                      _severity(rng, spec, box, cls)))
        counter[0] += 1
        return True

    def random_box(w: int, h: int, anchor_x: float | None = None, max_dx: float = 0.0) -> PixelBox:
        w, h = min(w, width), min(h, height - 2)
        if anchor_x is None:
            x = _rand_int(rng, 0, width - w)
        else:
            cx = anchor_x + rng.uniform(-max_dx, max_dx)
            x = int(np.clip(round(cx - w / 2), 0, width - w))
        y = _rand_int(rng, 1, height - 1 - h)
        return PixelBox(x, y, w, h)

    order = [c for c in DefectClass if c is C.CONNECTION] + [c for c in DefectClass if c is not C.CONNECTION]
    for cls in order:
        rate = spec.rates_per_100m.get(cls, 0.0)
        n = int(rng.poisson(rate * spec.length_m / 100.0)) if rate > 0 else 0
        for _ in range(n):
            anchors = list(joints) + [a.box.x + a.box.w / 2 for a in annotations if a.cls is C.CONNECTION]
            for _attempt in range(10):
                if cls in spec.cluster:
                    if _place_cluster(rng, spec, cls, anchors, place, random_box):
                        break
                else:
                    (wlo, whi), (hlo, hhi) = DEFAULT_SIZES.get(cls, ((100, 300), (100, 300)))
                    if place(cls, random_box(_rand_int(rng, wlo, whi), _rand_int(rng, hlo, hhi))):
                        break
    return geometry, annotations


def _place_cluster(rng, spec, cls, anchors, place, random_box) -> bool:
    params = spec.cluster[cls]
    n_sub = _rand_int(rng, *params.count_range)
    lo, hi = params.size_range
    anchor = None
    max_dx = 0.0
    if cls is C.ROOT:
        if not anchors:
            return True  # roots only grow at joints or connections; nothing to place
        anchor = float(anchors[_rand_int(rng, 0, len(anchors) - 1)])
        max_dx = spec.root_max_distance_m * spec.px_per_meter_axial
    first = random_box(_rand_int(rng, lo, hi), _rand_int(rng, lo, hi), anchor, max_dx)
    if not place(cls, first):
        return False
    prev = first
    direction = 1 if rng.random() < 0.5 else -1
    for _ in range(n_sub - 1):
        w, h = _rand_int(rng, lo, hi), _rand_int(rng, lo, hi)
        x = prev.x2 if direction > 0 else prev.x - w
        y = prev.y + _rand_int(rng, -params.spread_px, params.spread_px)
        y = int(np.clip(y, 1, spec.height_px - 1 - h))
        if cls is C.ROOT and anchor is not None and abs(x + w / 2 - anchor) > max_dx:
            break
        try:
            box = PixelBox(x, y, w, h)
        except UsageError:
            break
        if not place(cls, box):
            break
        prev = box
    return True


def _jitter(rng, box: PixelBox, profile: DetectorProfile) -> tuple[int, int, int, int]:
    cx = box.x + box.w / 2 + rng.normal(0, profile.center_sigma_px) if profile.center_sigma_px else box.x + box.w / 2
    cy = box.y + box.h / 2 + rng.normal(0, profile.center_sigma_px) if profile.center_sigma_px else box.y + box.h / 2
    w = box.w + rng.normal(0, profile.size_sigma_px) if profile.size_sigma_px else box.w
    h = box.h + rng.normal(0, profile.size_sigma_px) if profile.size_sigma_px else box.h
    w, h = max(1, int(round(w))), max(1, int(round(h)))
    return int(round(cx - w / 2)), int(round(cy - h / 2)), w, h


def _confidence(rng, params) -> float:
    if params is None:
        return 1.0
    return float(rng.beta(*params))


def _emit_box(x, y, w, h, width, height, wrap: bool) -> list[PixelBox]:
    """Clamp a jittered box into the mosaic; with ``wrap`` the part sticking
    out above or below reappears at the opposite edge."""
    w = min(w, width)
    x = int(np.clip(x, 0, width - w))
    h = min(h, height)
    if wrap and h < height and (y < 0 or y + h > height):
        if y < 0:
            top_h, bottom_h = h + y, -y
        else:
            top_h, bottom_h = y + h - height, height - y
        if top_h > 0 and bottom_h > 0:
            return [PixelBox(x, 0, w, top_h), PixelBox(x, height - bottom_h, w, bottom_h)]
    y = int(np.clip(y, 0, height - h))
    return [PixelBox(x, y, w, h)]


@dataclass
class Simulation:
    detections: list[Detection]
    planted_splits: list[tuple[str, str]]


def simulate_detector(
    annotations: Sequence[Annotation],
    profile: DetectorProfile,
    seed: int = 0,
    geometry: MosaicGeometry | None = None,
    *,
    return_splits: bool = False,
):
    """Detections drawn from a statistical detector model.

    Each annotation is found with its class probability, jittered, possibly
    duplicated; false positives land on annotation-free area. With
    ``seam_split`` a detection moved onto the ceiling seam (probability
    ``seam_shift_probability``) or jittered across it is emitted as two
    edge-touching parts; ``return_splits=True`` also returns those id pairs.
    """
    rng = np.random.default_rng(seed)
    if geometry is None:
        width = max((a.box.x2 for a in annotations), default=1)
        geometry = MosaicGeometry("pipe", width, 1.0)
    width, height = geometry.width_px, geometry.height_px
    dets: list[Detection] = []
    splits: list[tuple[str, str]] = []
    n = 0

    def emit(x, y, w, h, cls, conf):
        nonlocal n
        parts = _emit_box(x, y, w, h, width, height, profile.seam_split)
        ids = []
        for part in parts:
            ids.append(f"{geometry.pipe_id}-d{n:05d}")
            dets.append(Detection(ids[-1], part, cls, conf))
            n += 1
        if len(ids) == 2:
            splits.append((ids[0], ids[1]))

    for ann in annotations:
        if rng.random() >= profile.detect_probability.get(ann.cls, 0.0):
            continue
        copies = 1
        if profile.duplicate_count and rng.random() < profile.duplicate_probability:
            copies += profile.duplicate_count
        for _ in range(copies):
            x, y, w, h = _jitter(rng, ann.box, profile)
            if profile.seam_split and rng.random() < profile.seam_shift_probability:
                # the defect sits on the ceiling: centre it on the cut line
                y = -(h // 2) if h >= 2 else y
            emit(x, y, w, h, ann.cls, _confidence(rng, profile.tp_confidence))

    occupied = _Occupancy()
    for a in annotations:
        occupied.add(a.box)
    length_m = geometry.length_m
    for cls in DefectClass:
        rate = profile.false_positives_per_100m.get(cls, 0.0)
        k = int(rng.poisson(rate * length_m / 100.0)) if rate > 0 else 0
        for _ in range(k):
            for _attempt in range(20):
                w = min(width, _rand_int(rng, 40, 300))
                h = min(height, _rand_int(rng, 40, 300))
                box = PixelBox(_rand_int(rng, 0, width - w), _rand_int(rng, 0, height - h), w, h)
                if not occupied.overlaps(box):
                    dets.append(Detection(f"{geometry.pipe_id}-d{n:05d}", box, cls,
                                          _confidence(rng, profile.fp_confidence)))
                    n += 1
                    break
    if return_splits:
        return dets, splits
    return dets


class SimulatedDetector(BaseEstimator):
    """``predict`` maps a pipe's annotations to simulated detections."""

    def __init__(self, profile=None, random_state=0):
        self.profile = profile
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.profile_ = self.profile if self.profile is not None else DetectorProfile()
        return self

    def predict(self, annotations, geometry=None):
        if not hasattr(self, "profile_"):
            self.fit()
        return simulate_detector(annotations, self.profile_, self.random_state, geometry)


# --- rendering ---------------------------------------------------------------

ANNOTATION_RGB = (0, 220, 0)
DETECTION_RGB = (230, 30, 30)
DEFAULT_PIXEL_BUDGET = 40_000_000


def render_overlay(
    geometry: MosaicGeometry,
    annotations: Sequence[Annotation] = (),
    detections: Sequence[Detection] = (),
    *,
    seed: int = 0,
    max_pixels: int = DEFAULT_PIXEL_BUDGET,
    stroke: int = 2,
) -> np.ndarray:
    """RGB uint8 raster: grey axial texture, annotations and detections as outlines.

    The background stays strictly grey (r == g == b) so stroke colours can be
    counted. Mosaics above ``max_pixels`` are drawn at an integer downscale.
    """
    factor = 1
    while (geometry.width_px // factor) * (geometry.height_px // factor) > max_pixels:
        factor += 1
    if factor > 1:
        warnings.warn(f"mosaic {geometry.pipe_id} exceeds {max_pixels} px; rendering at 1/{factor} scale",
                      stacklevel=2)
    w = max(1, geometry.width_px // factor)
    h = max(1, geometry.height_px // factor)
    rng = np.random.default_rng(seed)
    column = rng.integers(100, 150, size=w, dtype=np.uint8)
    row = rng.integers(0, 12, size=h, dtype=np.uint8)
    grey = column[None, :] + row[:, None]
    img = np.repeat(grey[:, :, None], 3, axis=2)
    for items, rgb in ((annotations, ANNOTATION_RGB), (detections, DETECTION_RGB)):
        for it in items:
            _draw_rect(img, it.box, factor, rgb, stroke)
    return img


def _draw_rect(img, box: PixelBox, factor: int, rgb, stroke: int) -> None:
    h, w = img.shape[:2]
    x1, y1 = box.x // factor, box.y // factor
    x2 = min(w, max(x1 + 1, box.x2 // factor))
    y2 = min(h, max(y1 + 1, box.y2 // factor))
    s = max(1, stroke)
    img[y1:min(y2, y1 + s), x1:x2] = rgb
    img[max(y1, y2 - s):y2, x1:x2] = rgb
    img[y1:y2, x1:min(x2, x1 + s)] = rgb
    img[y1:y2, max(x1, x2 - s):x2] = rgb


def encode_ppm(img: np.ndarray) -> bytes:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise UsageError("PPM export needs an (h, w, 3) uint8 array")
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise UsageError("not an 8-bit binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))
