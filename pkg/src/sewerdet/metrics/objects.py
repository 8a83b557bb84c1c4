"""Object-level matching, per-class precision/recall and false-negative severity."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..core import Annotation, DefectClass, Detection, SeverityClass, boxes_to_array, iou, iou_matrix
from ..validation import check_iou_threshold


def rank_key(d: Detection):
    """Detection ranking: confidence descending, then x, y, id ascending."""
    return (-d.confidence, d.box.x, d.box.y, d.id)


@dataclass
class MatchResult:
    matches: list[tuple[Annotation, Detection, float]] = field(default_factory=list)
    unmatched_annotations: list[Annotation] = field(default_factory=list)
    unmatched_detections: list[Detection] = field(default_factory=list)

    def extend(self, other: MatchResult) -> MatchResult:
        self.matches.extend(other.matches)
        self.unmatched_annotations.extend(other.unmatched_annotations)
        self.unmatched_detections.extend(other.unmatched_detections)
        return self


class _ClassOverlaps:
    """Sparse IoU candidates of one class, reused across IoU thresholds.

    ``ranked`` lists detection indices in rank order; ``candidates[k]`` holds
    ``(iou, annotation index)`` pairs with positive IoU, best first.
    """

    def __init__(self, anns: Sequence[Annotation], dets: Sequence[Detection]):
        self.anns = anns
        self.dets = dets
        self.ranked = sorted(range(len(dets)), key=lambda i: rank_key(dets[i]))
        m = iou_matrix(boxes_to_array([a.box for a in anns]), boxes_to_array([d.box for d in dets]))
        self.candidates = []
        for k in self.ranked:
            col = m[:, k] if len(anns) else np.zeros(0)
            nz = np.nonzero(col)[0]
            order = sorted(nz.tolist(), key=lambda a: (-col[a], a))
            self.candidates.append([(float(col[a]), a) for a in order])

    def greedy(self, threshold: float) -> list[int]:
        """Annotation index matched by each ranked detection, or -1."""
        taken = set()
        out = []
        for cands in self.candidates:
            hit = -1
            for value, a in cands:
                if value < threshold:
                    break
                if a not in taken:
                    hit = a
                    taken.add(a)
                    break
            out.append(hit)
        return out


def _by_class(items) -> dict[DefectClass, list]:
    out = defaultdict(list)
    for it in items:
        out[it.cls].append(it)
    return out


def class_overlaps(annotations, detections) -> dict[DefectClass, _ClassOverlaps]:
    anns, dets = _by_class(annotations), _by_class(detections)
    return {c: _ClassOverlaps(anns.get(c, []), dets.get(c, []))
            for c in sorted(set(anns) | set(dets), key=lambda c: c.code)}


def match_objects(
    annotations: Iterable[Annotation],
    detections: Iterable[Detection],
    iou_threshold: float = 0.5,
) -> MatchResult:
    """One-to-one greedy matching per class.

    Detections are visited by confidence (ties by x, y, id); each takes the
    unmatched same-class annotation with the highest IoU at or above
    ``iou_threshold``.
    """
    threshold = check_iou_threshold(iou_threshold)
    result = MatchResult()
    for ov in class_overlaps(annotations, detections).values():
        hits = ov.greedy(threshold)
        used = set()
        for k, a in zip(ov.ranked, hits):
            det = ov.dets[k]
            if a < 0:
                result.unmatched_detections.append(det)
            else:
                used.add(a)
                ann = ov.anns[a]
                result.matches.append((ann, det, iou(ann.box, det.box)))
        result.unmatched_annotations.extend(a for i, a in enumerate(ov.anns) if i not in used)
    return result


@dataclass(frozen=True)
class ClassPR:
    precision: float
    recall: float
    n_objects: int
    n_detections: int = 0
    n_matched: int = 0

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "n_objects": self.n_objects,
                "n_detections": self.n_detections, "n_matched": self.n_matched}


@dataclass
class PRTable:
    rows: dict[DefectClass, ClassPR]
    macro: ClassPR
    micro: ClassPR

    def to_dict(self) -> dict:
        return {
            "per_class": {c.code: r.to_dict() for c, r in self.rows.items()},
            "macro_average": self.macro.to_dict(),
            "micro_average": self.micro.to_dict(),
        }


def _ratio(num: int, den: int) -> float:
    return num / den if den else 1.0


def per_class_pr(result: MatchResult) -> PRTable:
    """Precision/recall/N-object rows; classes with neither objects nor detections are omitted.

    Rows with no detections get precision 1.0 by convention. The macro row is
    the unweighted class mean, the micro row pools all counts.
    """
    matched = defaultdict(int)
    n_ann = defaultdict(int)
    n_det = defaultdict(int)
    for ann, _det, _ in result.matches:
        matched[ann.cls] += 1
        n_ann[ann.cls] += 1
        n_det[ann.cls] += 1
    for ann in result.unmatched_annotations:
        n_ann[ann.cls] += 1
    for det in result.unmatched_detections:
        n_det[det.cls] += 1
    rows = {}
    for c in DefectClass:
        if n_ann[c] == 0 and n_det[c] == 0:
            continue
        rows[c] = ClassPR(_ratio(matched[c], n_det[c]), _ratio(matched[c], n_ann[c]),
                          n_ann[c], n_det[c], matched[c])
    if rows:
        macro = ClassPR(
            float(np.mean([r.precision for r in rows.values()])),
            float(np.mean([r.recall for r in rows.values()])),
            sum(n_ann.values()), sum(n_det.values()), sum(matched.values()),
        )
    else:
        macro = ClassPR(1.0, 1.0, 0)
    tm, ta, td = sum(matched.values()), sum(n_ann.values()), sum(n_det.values())
    micro = ClassPR(_ratio(tm, td), _ratio(tm, ta), ta, td, tm)
    return PRTable(rows, macro, micro)


@dataclass
class SeverityReport:
    """Histogram of missed ground truth by condition class."""

    counts: dict[SeverityClass, int]
    total_annotations: int | None = None

    @property
    def total_missed(self) -> int:
        return sum(self.counts.values())

    @property
    def severe_missed(self) -> int:
        return self.counts[SeverityClass.VERY_SEVERE] + self.counts[SeverityClass.SEVERE]

    @property
    def severe_fraction(self) -> float | None:
        if not self.total_annotations:
            return None
        return self.severe_missed / self.total_annotations

    @property
    def missed_fraction(self) -> float | None:
        if not self.total_annotations:
            return None
        return self.total_missed / self.total_annotations

    def combined(self) -> dict[str, int]:
        """Buckets ``0``, ``1``, ``2&3``, ``4``."""
        c = self.counts
        return {
            "0": c[SeverityClass.VERY_SEVERE],
            "1": c[SeverityClass.SEVERE],
            "2&3": c[SeverityClass.MEDIUM] + c[SeverityClass.SLIGHT],
            "4": c[SeverityClass.MINOR],
        }

    def to_dict(self) -> dict:
        return {
            "by_condition": {str(int(k)): v for k, v in sorted(self.counts.items())},
            "combined": self.combined(),
            "total_missed": self.total_missed,
            "severe_missed": self.severe_missed,
            "total_annotations": self.total_annotations,
            "missed_fraction": self.missed_fraction,
            "severe_fraction": self.severe_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SeverityReport:
        counts = {SeverityClass(int(k)): int(v) for k, v in d["by_condition"].items()}
        for s in SeverityClass:
            counts.setdefault(s, 0)
        return cls(counts, d.get("total_annotations"))

    def format_table(self) -> str:
        c = self.combined()
        rows = [
            (c["0"], "0", "very severe"),
            (c["1"], "1", "severe"),
            (c["2&3"], "2 & 3", "med. & slight"),
            (c["4"], "4", "minor"),
        ]
        lines = [f"{'Object count':>12} | {'Condition class':^15} | Severity"]
        lines.append("-" * len(lines[0]))
        lines += [f"{n:>12} | {cc:^15} | {label}" for n, cc, label in rows]
        tail = f"Missed objects: {self.total_missed}"
        if self.total_annotations:
            tail += (f" of {self.total_annotations} ({100 * self.missed_fraction:.2f}%); "
                     f"severe (0-1): {self.severe_missed} ({100 * self.severe_fraction:.2f}%)")
        else:
            tail += f"; severe (0-1): {self.severe_missed}"
        lines.append(tail)
        return "\n".join(lines)


def fn_severity_report(
    unmatched_annotations: Iterable[Annotation],
    total_annotations: int | None = None,
) -> SeverityReport:
    counts = {s: 0 for s in SeverityClass}
    for ann in unmatched_annotations:
        counts[SeverityClass(ann.severity)] += 1
    return SeverityReport(counts, total_annotations)
