from __future__ import annotations

from collections import defaultdict
from typing import Iterable

import numpy as np

from ..core import CylindricalSpan, Detection, MosaicGeometry, axial_overlap_ratio
from ..validation import check_fraction
from .assignment import AssignmentProblem, solve_assignment

DEFAULT_MIN_AXIAL_OVERLAP = 0.1


def stitch_seam(
    detections: Iterable[Detection],
    geometry: MosaicGeometry,
    min_axial_overlap: float = DEFAULT_MIN_AXIAL_OVERLAP,
) -> tuple[list[Detection], list[CylindricalSpan]]:
    """Pair detections cut by the ceiling seam into :class:`CylindricalSpan` objects.

    A box touching ``y = 0`` may pair with a same-class box touching the lower
    edge; the pairing cost is ``1 - axial_overlap_ratio`` and pairs below
    ``min_axial_overlap`` are not allowed. Full-height boxes are left alone.
    Matched detections leave the flat list, so
    ``len(dets_in) == len(dets_out) + 2 * len(spans)``.
    """
    min_axial_overlap = check_fraction(min_axial_overlap, "min_axial_overlap")
    dets = list(detections)
    height = geometry.height_px
    tops = defaultdict(list)
    bottoms = defaultdict(list)
    for i, d in enumerate(dets):
        touches_top = d.box.y == 0
        touches_bottom = d.box.y2 == height
        if touches_top and not touches_bottom:
            tops[d.cls].append(i)
        elif touches_bottom and not touches_top:
            bottoms[d.cls].append(i)

    consumed = set()
    spans = []
    for cls in sorted(tops, key=lambda c: c.code):
        rows, cols = tops[cls], bottoms.get(cls, [])
        if not cols:
            continue
        overlap = np.array(
            [[axial_overlap_ratio(dets[r].box, dets[c].box) for c in cols] for r in rows]
        )
        forbid = frozenset(zip(*np.nonzero(overlap < min_axial_overlap)))
        matching = solve_assignment(AssignmentProblem(1.0 - overlap, forbid))
        for r, c in matching.pairs:
            top, bottom = dets[rows[r]], dets[cols[c]]
            consumed.update((rows[r], cols[c]))
            spans.append(
                CylindricalSpan(
                    top_part=top.box,
                    bottom_part=bottom.box,
                    cls=cls,
                    confidence=max(top.confidence, bottom.confidence),
                    height_px=height,
                    source_ids=(top.id, bottom.id),
                )
            )
    spans.sort(key=lambda s: (s.top_part.x, s.cls.code, s.source_ids))
    return [d for i, d in enumerate(dets) if i not in consumed], spans
