from .ap import COCO_IOU_THRESHOLDS, MapSuite, average_precision, interpolated_precision, map_suite, map_suite_pipes
from .chunks import (
    Chunk,
    ChunkVerdict,
    ConfusionCounts,
    SummaryStats,
    Verdict,
    chunk_confusion,
    chunk_grid,
    summary_stats,
)
from .objects import (
    ClassPR,
    MatchResult,
    PRTable,
    SeverityReport,
    fn_severity_report,
    match_objects,
    per_class_pr,
)
from .report import DetectionEvaluator, EvalReport, PipeData, evaluate, report_from_counts

__all__ = [
    "COCO_IOU_THRESHOLDS",
    "Chunk",
    "ChunkVerdict",
    "ClassPR",
    "ConfusionCounts",
    "DetectionEvaluator",
    "EvalReport",
    "MapSuite",
    "MatchResult",
    "PRTable",
    "PipeData",
    "SeverityReport",
    "SummaryStats",
    "Verdict",
    "average_precision",
    "chunk_confusion",
    "chunk_grid",
    "evaluate",
    "fn_severity_report",
    "interpolated_precision",
    "map_suite",
    "map_suite_pipes",
    "match_objects",
    "per_class_pr",
    "report_from_counts",
    "summary_stats",
]
