from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from sklearn.base import BaseEstimator

from ..core import Annotation, Detection, MosaicGeometry
from ..validation import check_annotations, check_detections, check_iou_threshold, check_positive
from .ap import COCO_IOU_THRESHOLDS, MapSuite, map_suite_pipes
from .chunks import DEFAULT_CHUNK_PX, ChunkVerdict, ConfusionCounts, chunk_confusion, chunk_grid, summary_stats
from .objects import ClassPR, MatchResult, PRTable, SeverityReport, fn_severity_report, match_objects, per_class_pr


@dataclass
class PipeEvaluation:
    pipe_id: str
    counts: ConfusionCounts
    meters: float
    verdicts: list[ChunkVerdict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"pipe_id": self.pipe_id, "counts": self.counts.to_dict(), "meters": self.meters,
                "verdicts": [cv.verdict.value for cv in self.verdicts]}


@dataclass
class EvalReport:
    counts: ConfusionCounts
    total_chunks: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: PRTable | None = None
    maps: MapSuite | None = None
    fn_severity: SeverityReport | None = None
    meters_evaluated: float | None = None
    pipes: list[PipeEvaluation] = field(default_factory=list)

    @property
    def map50(self):
        return self.maps.map50 if self.maps else None

    @property
    def map75(self):
        return self.maps.map75 if self.maps else None

    @property
    def map5095(self):
        return self.maps.map5095 if self.maps else None

    def to_dict(self) -> dict:
        return {
            "running_meters": {
                "counts": self.counts.to_dict(),
                "total_chunks": self.total_chunks,
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "meters_evaluated": self.meters_evaluated,
            },
            "objects": self.per_class.to_dict() if self.per_class else None,
            "map": self.maps.to_dict() if self.maps else None,
            "fn_severity": self.fn_severity.to_dict() if self.fn_severity else None,
            "pipes": [p.to_dict() for p in self.pipes],
        }

    def format_text(self) -> str:
        lines = ["Running meters metric", "====================="]
        c, n = self.counts, self.total_chunks
        for name, v in (("TP", c.tp), ("TN", c.tn), ("FP", c.fp), ("FN", c.fn)):
            lines.append(f"  {name}: {v:>7} ({100 * v / n:.0f}%)" if n else f"  {name}: {v:>7}")
        lines.append(f"  chunks:    {n}")
        if self.meters_evaluated is not None:
            lines.append(f"  meters:    {self.meters_evaluated:.2f}")
        lines += [
            f"  accuracy:  {100 * self.accuracy:.2f}%",
            f"  precision: {100 * self.precision:.2f}%",
            f"  recall:    {100 * self.recall:.2f}%",
            f"  f1:        {100 * self.f1:.2f}%",
        ]
        if self.per_class is not None:
            lines += ["", "Object-level evaluation", "======================="]
            lines.append(f"{'Defects/Struct.':<17}| {'Precision':<10}| {'Recall':<10}| {'N object':>8}")
            for cls, row in self.per_class.rows.items():
                lines.append(_pr_line(cls.display_name, row))
            lines.append(_pr_line("All average", self.per_class.macro))
            lines.append(_pr_line("Pooled (micro)", self.per_class.micro))
        if self.maps is not None:
            lines += ["", "mAP", "==="]
            for label, v in (("mAP@0.5", self.map50), ("mAP@0.75", self.map75),
                             ("mAP@[.5:.95]", self.map5095)):
                lines.append(f"  {label:<13} {'n/a' if v is None else f'{100 * v:.1f}'}")
        if self.fn_severity is not None:
            lines += ["", "Severity of false negatives", "===========================",
                      self.fn_severity.format_table()]
        return "\n".join(lines) + "\n"


def _pr_line(name: str, row: ClassPR) -> str:
    return f"{name:<17}| {row.precision:<10.4f}| {row.recall:<10.4f}| {row.n_objects:>8}"


def report_from_counts(counts: ConfusionCounts, total: int | None = None) -> EvalReport:
    """Chunk statistics alone, e.g. for published confusion counts."""
    stats = summary_stats(counts, total)
    return EvalReport(counts, counts.total if total is None else int(total),
                      stats.accuracy, stats.precision, stats.recall, stats.f1)


@dataclass
class PipeData:
    geometry: MosaicGeometry
    annotations: Sequence[Annotation]
    detections: Sequence[Detection]


def evaluate(
    pipes: Sequence[PipeData],
    chunk_width: int = DEFAULT_CHUNK_PX,
    match_iou: float = 0.5,
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
) -> EvalReport:
    """Full report over pipes, folded in the given pipe order."""
    chunk_width = check_positive(chunk_width, "chunk_width", integer=True)
    match_iou = check_iou_threshold(match_iou, "match_iou")
    counts = ConfusionCounts()
    per_pipe = []
    matches = MatchResult()
    n_ann = 0
    meters = 0.0
    for p in pipes:
        anns = check_annotations(p.annotations, p.geometry)
        dets = check_detections(p.detections, p.geometry)
        verdicts, c = chunk_confusion(anns, dets, chunk_grid(p.geometry, chunk_width))
        counts = counts + c
        per_pipe.append(PipeEvaluation(p.geometry.pipe_id, c, p.geometry.length_m, verdicts))
        meters += p.geometry.length_m
        matches.extend(match_objects(anns, dets, match_iou))
        n_ann += len(anns)
    stats = summary_stats(counts)
    return EvalReport(
        counts=counts,
        total_chunks=counts.total,
        accuracy=stats.accuracy,
        precision=stats.precision,
        recall=stats.recall,
        f1=stats.f1,
        per_class=per_class_pr(matches),
        maps=map_suite_pipes([(p.annotations, p.detections) for p in pipes], iou_thresholds),
        fn_severity=fn_severity_report(matches.unmatched_annotations, n_ann),
        meters_evaluated=meters,
        pipes=per_pipe,
    )


class DetectionEvaluator(BaseEstimator):
    """Parameter holder around :func:`evaluate` so configurations can be
    cloned and compared like any other estimator."""

    def __init__(self, chunk_width=DEFAULT_CHUNK_PX, match_iou=0.5, iou_thresholds=COCO_IOU_THRESHOLDS):
        self.chunk_width = chunk_width
        self.match_iou = match_iou
        self.iou_thresholds = iou_thresholds

    def evaluate(self, pipes: Sequence[PipeData]) -> EvalReport:
        return evaluate(pipes, self.chunk_width, self.match_iou, self.iou_thresholds)

    def score(self, pipes: Sequence[PipeData], y=None) -> float:
        """Running-meters accuracy, so larger is better."""
        return self.evaluate(pipes).accuracy
