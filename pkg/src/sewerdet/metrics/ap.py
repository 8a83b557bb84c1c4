"""COCO-style average precision with 101-point interpolation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..core import Annotation, DefectClass, Detection
from ..validation import check_iou_threshold
from .objects import class_overlaps, rank_key

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = 101


def interpolated_precision(tp_flags: Sequence[bool], n_gt: int) -> np.ndarray:
    """Precision envelope sampled at recall 0, 0.01, ..., 1.

    ``tp_flags`` are the detections' match outcomes in rank order. Recall
    points are compared in integer arithmetic, so recall exactly 0.5 counts
    for the 0.50 point.
    """
    tp_flags = np.asarray(tp_flags, dtype=bool)
    out = np.zeros(RECALL_POINTS)
    if n_gt <= 0 or tp_flags.size == 0:
        return out
    tp_cum = np.cumsum(tp_flags)
    precision = tp_cum / np.arange(1, tp_flags.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # first rank whose recall reaches i/100: tp_cum * 100 >= i * n_gt
    first = np.searchsorted(tp_cum * 100, np.arange(RECALL_POINTS) * n_gt, side="left")
    reached = first < tp_flags.size
    out[reached] = envelope[first[reached]]
    return out


def _ap_from_flags(tp_flags, n_gt: int) -> float | None:
    if n_gt <= 0:
        return None
    return float(interpolated_precision(tp_flags, n_gt).sum() / RECALL_POINTS)


def _ranked_flags(groups, cls: DefectClass, thresholds: Sequence[float]):
    """Per threshold: TP flags of every detection of ``cls`` in global rank order."""
    keyed = []  # (rank key, {threshold: flag})
    n_gt = 0
    for pipe_index, ov in enumerate(groups):
        if ov is None:
            continue
        n_gt += len(ov.anns)
        hits = {t: ov.greedy(t) for t in thresholds}
        for pos, k in enumerate(ov.ranked):
            key = rank_key(ov.dets[k])
            keyed.append(((key[0], pipe_index) + key[1:], {t: hits[t][pos] >= 0 for t in thresholds}))
    keyed.sort(key=lambda kv: kv[0])
    flags = {t: [f[t] for _, f in keyed] for t in thresholds}
    return flags, n_gt


def average_precision(
    annotations: Iterable[Annotation],
    detections: Iterable[Detection],
    cls: DefectClass,
    iou_threshold: float = 0.5,
) -> float | None:
    """AP of one class on one pipe; None when the class has no ground truth."""
    t = check_iou_threshold(iou_threshold)
    cls = DefectClass.parse(cls)
    ov = class_overlaps(
        [a for a in annotations if a.cls is cls], [d for d in detections if d.cls is cls]
    ).get(cls)
    flags, n_gt = _ranked_flags([ov], cls, [t])
    return _ap_from_flags(flags[t], n_gt)


@dataclass
class MapSuite:
    ap: dict[float, dict[DefectClass, float]]  # threshold -> class -> AP
    map_per_threshold: dict[float, float | None]
    map50: float | None
    map75: float | None
    map5095: float | None

    def to_dict(self) -> dict:
        return {
            "ap": {f"{t:.2f}": {c.code: v for c, v in per.items()} for t, per in self.ap.items()},
            "map_per_threshold": {f"{t:.2f}": v for t, v in self.map_per_threshold.items()},
            "map50": self.map50,
            "map75": self.map75,
            "map5095": self.map5095,
        }


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def map_suite_pipes(
    pipes: Sequence[tuple[Sequence[Annotation], Sequence[Detection]]],
    thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
) -> MapSuite:
    """mAP over several pipes; matching stays within a pipe, ranking is global."""
    thresholds = [check_iou_threshold(t) for t in thresholds]
    per_pipe = [class_overlaps(anns, dets) for anns, dets in pipes]
    classes = sorted({c for ovs in per_pipe for c in ovs}, key=lambda c: c.code)
    ap = {t: {} for t in thresholds}
    for cls in classes:
        flags, n_gt = _ranked_flags([ovs.get(cls) for ovs in per_pipe], cls, thresholds)
        if n_gt == 0:
            continue
        for t in thresholds:
            ap[t][cls] = _ap_from_flags(flags[t], n_gt)
    per_t = {t: _mean(ap[t].values()) for t in thresholds}

    def at(x):
        for t in thresholds:
            if abs(t - x) < 1e-9:
                return per_t[t]
        return None

    return MapSuite(ap, per_t, at(0.5), at(0.75), _mean(per_t.values()))


def map_suite(
    annotations: Iterable[Annotation],
    detections: Iterable[Detection],
    thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
) -> MapSuite:
    return map_suite_pipes([(list(annotations), list(detections))], thresholds)
