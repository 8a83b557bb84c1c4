"""Sliding-window tiling of W x 1200 mosaics into square training patches.

The geometry is handled in three frames: the mosaic frame (pixels of the
unrolled pipe), the patch frame (pixels relative to a window's left edge)
and the network frame (patch frame times the down-sampling ``scale``).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import Annotation, DefectClass, MosaicGeometry, PixelBox
from .exceptions import UsageError
from .validation import check_fraction, check_positive

DEFAULT_PATCH_PX = 1200
DEFAULT_STRIDE_PX = 600
DEFAULT_NETWORK_PX = 640
DEFAULT_SCALE = Fraction(DEFAULT_NETWORK_PX, DEFAULT_PATCH_PX)
DEFAULT_FLIP_PROBABILITY = 0.25


@dataclass(frozen=True)
class WindowPlan:
    patch_size_px: int
    stride_px: int
    windows: tuple[int, ...]

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)


@dataclass(frozen=True)
class PatchLabel:
    box: PixelBox  # patch frame, integer pixels
    cls: DefectClass
    source_id: str = ""


@dataclass(frozen=True)
class PatchSample:
    """One training patch; labels are kept in the integer patch frame.

    ``network_boxes`` gives the same labels scaled into the network input.
    """

    pipe_id: str
    window_offset_px: int
    patch_size_px: int
    scale: float
    labels: tuple[PatchLabel, ...]
    flip_ud: bool = False
    flip_lr: bool = False

    @property
    def network_size(self) -> float:
        return self.patch_size_px * self.scale

    @property
    def network_boxes(self) -> list[tuple[float, float, float, float]]:
        return [to_network_frame(lab.box, self.scale) for lab in self.labels]


def plan_windows(
    mosaic: MosaicGeometry | int,
    patch_size_px: int = DEFAULT_PATCH_PX,
    stride_px: int = DEFAULT_STRIDE_PX,
) -> WindowPlan:
    """Left edges of overlapping windows; the last one is clamped to the right edge."""
    width = mosaic.width_px if isinstance(mosaic, MosaicGeometry) else int(mosaic)
    patch_size_px = check_positive(patch_size_px, "patch_size_px", integer=True)
    stride_px = check_positive(stride_px, "stride_px", integer=True)
    if stride_px > patch_size_px:
        raise UsageError("stride_px must not exceed patch_size_px (columns would be skipped)")
    if width <= patch_size_px:
        return WindowPlan(patch_size_px, stride_px, (0,))
    offsets = list(range(0, width - patch_size_px + 1, stride_px))
    if offsets[-1] + patch_size_px < width:
        offsets.append(width - patch_size_px)
    return WindowPlan(patch_size_px, stride_px, tuple(offsets))


def clip_to_window(
    window_offset: int,
    patch_size: int,
    annotations: Iterable[Annotation],
    min_visible_fraction: float = 0.25,
    patch_height: int | None = None,
) -> list[PatchLabel]:
    """Translate annotations into the patch frame and clip them to the patch.

    Annotations whose visible area fraction falls below ``min_visible_fraction``
    are dropped. ``patch_height`` defaults to ``patch_size`` (square patches).
    """
    min_visible_fraction = check_fraction(min_visible_fraction, "min_visible_fraction")
    patch_height = patch_size if patch_height is None else patch_height
    window = PixelBox(window_offset, 0, patch_size, patch_height)
    out = []
    for ann in annotations:
        visible = ann.box.intersection(window)
        if visible is None:
            continue
        # compare as integers: visible/area >= f
        if visible.area < min_visible_fraction * ann.box.area:
            continue
        out.append(PatchLabel(visible.translate(dx=-window_offset), ann.cls, ann.id))
    return out


def to_network_frame(box: PixelBox | Sequence, scale, window_offset: int = 0):
    """Scale a box (shifted into the patch frame by ``window_offset``) to the network input.

    With a :class:`fractions.Fraction` scale and integer boxes the result is exact.
    """
    if not scale > 0:
        raise UsageError("scale must be > 0")
    x, y, w, h = box.as_list() if isinstance(box, PixelBox) else box
    return ((x - window_offset) * scale, y * scale, w * scale, h * scale)


def to_mosaic_frame(box: Sequence, window_offset: int, scale, *, rounding: bool = True):
    """Inverse of :func:`to_network_frame`.

    Returns a :class:`PixelBox` when ``rounding`` is set, otherwise the raw
    real-valued ``(x, y, w, h)`` tuple.
    """
    if not scale > 0:
        raise UsageError("scale must be > 0")
    x, y, w, h = box
    real = (x / scale + window_offset, y / scale, w / scale, h / scale)
    if not rounding:
        return real
    x1, y1 = round(real[0]), round(real[1])
    return PixelBox(x1, y1, max(1, round(real[2])), max(1, round(real[3])))


def flip_patch(sample: PatchSample, up_down: bool = False, left_right: bool = False) -> PatchSample:
    """Mirror the labels of a patch; flags toggle so flipping twice restores the input."""
    if not (up_down or left_right):
        return sample
    size = sample.patch_size_px
    labels = []
    for lab in sample.labels:
        b = lab.box
        x = size - b.x - b.w if left_right else b.x
        y = size - b.y - b.h if up_down else b.y
        labels.append(replace(lab, box=PixelBox(x, y, b.w, b.h)))
    return replace(
        sample,
        labels=tuple(labels),
        flip_ud=sample.flip_ud ^ bool(up_down),
        flip_lr=sample.flip_lr ^ bool(left_right),
    )


def patch_rng(seed: int, pipe_index: int, patch_index: int) -> np.random.Generator:
    """Random stream for one patch, independent of processing order."""
    return np.random.default_rng([int(seed), int(pipe_index), int(patch_index)])


def export_training_set(
    pipes: Iterable[tuple[MosaicGeometry, Sequence[Annotation]]],
    seed: int = 0,
    *,
    patch_size_px: int = DEFAULT_PATCH_PX,
    stride_px: int = DEFAULT_STRIDE_PX,
    scale=DEFAULT_SCALE,
    min_visible_fraction: float = 0.25,
    flip_probability: float = DEFAULT_FLIP_PROBABILITY,
) -> Iterator[PatchSample]:
    """Yield one augmented :class:`PatchSample` per planned window of each pipe.

    Annotations visible in two overlapping windows are emitted once per window.
    Flip flags are Bernoulli(``flip_probability``) draws from :func:`patch_rng`.
    """
    flip_probability = check_fraction(flip_probability, "flip_probability")
    for pipe_index, (geometry, pipe_annotations) in enumerate(pipes):
        anns = list(pipe_annotations)
        plan = plan_windows(geometry, patch_size_px, stride_px)
        for patch_index, offset in enumerate(plan.windows):
            labels = clip_to_window(
                offset, patch_size_px, anns, min_visible_fraction,
                patch_height=geometry.height_px,
            )
            sample = PatchSample(
                pipe_id=geometry.pipe_id,
                window_offset_px=offset,
                patch_size_px=patch_size_px,
                scale=scale,
                labels=tuple(labels),
            )
            u = patch_rng(seed, pipe_index, patch_index).random(2)
            yield flip_patch(sample, up_down=bool(u[0] < flip_probability),
                             left_right=bool(u[1] < flip_probability))


class MosaicTiler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`export_training_set`.

    ``transform`` takes a sequence of ``(geometry, annotations)`` pairs and
    returns the list of patch samples. The tiler is stateless; ``fit`` only
    validates parameters.
    """

    def __init__(
        self,
        patch_size_px=DEFAULT_PATCH_PX,
        stride_px=DEFAULT_STRIDE_PX,
        scale=DEFAULT_SCALE,
        min_visible_fraction=0.25,
        flip_probability=DEFAULT_FLIP_PROBABILITY,
        random_state=0,
    ):
        self.patch_size_px = patch_size_px
        self.stride_px = stride_px
        self.scale = scale
        self.min_visible_fraction = min_visible_fraction
        self.flip_probability = flip_probability
        self.random_state = random_state

    def fit(self, X=None, y=None):
        check_positive(self.patch_size_px, "patch_size_px", integer=True)
        check_positive(self.stride_px, "stride_px", integer=True)
        check_positive(self.scale, "scale")
        check_fraction(self.min_visible_fraction, "min_visible_fraction")
        check_fraction(self.flip_probability, "flip_probability")
        if self.stride_px > self.patch_size_px:
            raise UsageError("stride_px must not exceed patch_size_px")
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        seed = 0 if self.random_state is None else int(self.random_state)
        return list(
            export_training_set(
                X,
                seed,
                patch_size_px=self.patch_size_px,
                stride_px=self.stride_px,
                scale=self.scale,
                min_visible_fraction=self.min_visible_fraction,
                flip_probability=self.flip_probability,
            )
        )
