"""Running-meters metric: the pipe is cut into fixed-width axial chunks and
each chunk is judged TP/FP/TN/FN by the classes present, not by box geometry.
"""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..core import Annotation, DefectClass, Detection, MosaicGeometry
from ..exceptions import UsageError
from ..validation import check_positive

DEFAULT_CHUNK_PX = 600


@dataclass(frozen=True)
class Chunk:
    index: int
    x_start: int
    x_end: int  # exclusive

    @property
    def width(self) -> int:
        return self.x_end - self.x_start

    @property
    def x_range(self) -> tuple[int, int]:
        return (self.x_start, self.x_end)


class Verdict(str, enum.Enum):
    TP = "TP"
    FP = "FP"
    TN = "TN"
    FN = "FN"


@dataclass(frozen=True)
class ChunkVerdict:
    chunk: Chunk
    verdict: Verdict
    gt_classes_present: frozenset
    predicted_classes_present: frozenset


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if int(getattr(self, name)) < 0:
                raise UsageError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

    @classmethod
    def from_verdicts(cls, verdicts: Iterable[ChunkVerdict]) -> ConfusionCounts:
        n = {v: 0 for v in Verdict}
        for cv in verdicts:
            n[cv.verdict] += 1
        return cls(n[Verdict.TP], n[Verdict.FP], n[Verdict.TN], n[Verdict.FN])


@dataclass(frozen=True)
class SummaryStats:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def chunk_grid(geometry: MosaicGeometry | int, chunk_w: int = DEFAULT_CHUNK_PX) -> list[Chunk]:
    width = geometry.width_px if isinstance(geometry, MosaicGeometry) else int(geometry)
    chunk_w = check_positive(chunk_w, "chunk_w", integer=True)
    n = -(-width // chunk_w)
    return [Chunk(i, i * chunk_w, min((i + 1) * chunk_w, width)) for i in range(n)]


def _classes_per_chunk(items, chunks: Sequence[Chunk]) -> list[set]:
    starts = [c.x_start for c in chunks]
    present = [set() for _ in chunks]
    for it in items:
        b = it.box
        # candidate chunks: start < box end, and end > box start
        lo = max(bisect.bisect_right(starts, b.x) - 1, 0)
        hi = bisect.bisect_left(starts, b.x2)
        for k in range(lo, hi):
            c = chunks[k]
            if c.x_start < b.x2 and b.x < c.x_end:
                present[k].add(it.cls)
    return present


def chunk_confusion(
    annotations: Iterable[Annotation],
    detections: Iterable[Detection],
    chunks: Sequence[Chunk],
) -> tuple[list[ChunkVerdict], ConfusionCounts]:
    """Judge every chunk.

    A box belongs to every chunk it overlaps with positive width. With ground
    truth present a chunk is TP when a predicted class matches one of the true
    classes there, otherwise FN (a wrong-class-only prediction is still a
    miss). Without ground truth any prediction makes it FP, none makes it TN.
    """
    chunks = sorted(chunks, key=lambda c: c.x_start)
    gt = _classes_per_chunk(annotations, chunks)
    pred = _classes_per_chunk(detections, chunks)
    verdicts = []
    for chunk, g, p in zip(chunks, gt, pred):
        if g:
            v = Verdict.TP if g & p else Verdict.FN
        else:
            v = Verdict.FP if p else Verdict.TN
        verdicts.append(ChunkVerdict(chunk, v, frozenset(g), frozenset(p)))
    return verdicts, ConfusionCounts.from_verdicts(verdicts)


def summary_stats(counts: ConfusionCounts, total: int | None = None) -> SummaryStats:
    """Accuracy, precision, recall and F1 of chunk verdict counts.

    ``total`` overrides the accuracy denominator for published counts whose
    four cells do not add up to the reported number of chunks. Zero
    denominators give precision/recall 1.0 (a silent detector on a
    defect-free pipe is perfect) and F1 0.0 when both are zero.
    """
    total = counts.total if total is None else int(total)
    if total <= 0:
        raise UsageError("summary_stats needs at least one chunk")
    accuracy = (counts.tp + counts.tn) / total
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 1.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SummaryStats(accuracy, precision, recall, f1)


def defect_classes_of(verdicts: Iterable[ChunkVerdict]) -> dict[DefectClass, int]:
    """How many chunks contain each ground-truth class."""
    out: dict[DefectClass, int] = {}
    for cv in verdicts:
        for c in cv.gt_classes_present:
            out[c] = out.get(c, 0) + 1
    return out
