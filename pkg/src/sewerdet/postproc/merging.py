"""Fusing fragmented detections (connected components) and greedy NMS."""
from __future__ import annotations

from collections import defaultdict
from typing import Iterable

import numpy as np

from ..core import Detection, boxes_to_array, enclosing_box, iou_matrix
from ..validation import check_iou_threshold

DEFAULT_MERGE_IOU = 0.2
DEFAULT_NMS_IOU = 0.5


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # smaller root wins so component labels are order-stable
            if rj < ri:
                ri, rj = rj, ri
            self.parent[rj] = ri


def _sources(det: Detection) -> tuple[str, ...]:
    return det.merged_from if det.merged_from else (det.id,)


def _merge_once(dets: list[Detection], threshold: float) -> tuple[list[Detection], bool]:
    uf = _UnionFind(len(dets))
    by_class = defaultdict(list)
    for i, d in enumerate(dets):
        by_class[d.cls].append(i)
    linked = False
    for idx in by_class.values():
        if len(idx) < 2:
            continue
        arr = boxes_to_array([dets[i].box for i in idx])
        m = iou_matrix(arr, arr)
        rows, cols = np.nonzero(np.triu(m >= threshold, k=1))
        for r, c in zip(rows.tolist(), cols.tolist()):
            uf.union(idx[r], idx[c])
            linked = True
    if not linked:
        return dets, False

    groups: dict[int, list[int]] = defaultdict(list)
    for i in range(len(dets)):
        groups[uf.find(i)].append(i)
    out = []
    for root in sorted(groups):
        members = groups[root]
        if len(members) == 1:
            out.append(dets[members[0]])
            continue
        parts = [dets[i] for i in members]
        sources = tuple(sorted({s for p in parts for s in _sources(p)}))
        notes = tuple(dict.fromkeys(n for p in parts for n in p.notes))
        out.append(
            Detection(
                id="+".join(sources),
                box=enclosing_box(p.box for p in parts),
                cls=parts[0].cls,
                confidence=max(p.confidence for p in parts),
                merged_from=sources,
                notes=notes,
            )
        )
    return out, True


def merge_connected(detections: Iterable[Detection], iou_link_threshold: float = DEFAULT_MERGE_IOU) -> list[Detection]:
    """Replace every same-class IoU-connected component by its enclosing box.

    The merged detection keeps the highest confidence and lists the raw ids it
    absorbed in ``merged_from``. Enclosing boxes may themselves overlap enough
    to link, so merging repeats until nothing links; a second call is a no-op.
    """
    threshold = check_iou_threshold(iou_link_threshold, "iou_link_threshold")
    dets = list(detections)
    changed = True
    while changed:
        dets, changed = _merge_once(dets, threshold)
    return dets


def _rank_key(d: Detection):
    return (-d.confidence, d.box.x, d.box.y, d.id)


def nms(detections: Iterable[Detection], iou_suppress_threshold: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """Greedy per-class non-maximum suppression; survivors keep input order."""
    threshold = check_iou_threshold(iou_suppress_threshold, "iou_suppress_threshold")
    dets = list(detections)
    by_class = defaultdict(list)
    for i, d in enumerate(dets):
        by_class[d.cls].append(i)
    keep = set()
    for idx in by_class.values():
        order = sorted(idx, key=lambda i: _rank_key(dets[i]))
        arr = boxes_to_array([dets[i].box for i in order])
        m = iou_matrix(arr, arr)
        alive = np.ones(len(order), dtype=bool)
        for k in range(len(order)):
            if not alive[k]:
                continue
            keep.add(order[k])
            alive[k + 1:] &= m[k, k + 1:] < threshold
    return [d for i, d in enumerate(dets) if i in keep]
