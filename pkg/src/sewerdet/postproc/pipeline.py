from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from ..core import CylindricalSpan, Detection, MosaicGeometry
from ..exceptions import ConfigError
from ..validation import check_detections, check_fraction, check_iou_threshold
from .merging import DEFAULT_MERGE_IOU, merge_connected, nms
from .rules import PipeContext, Rule, RuleEvent, apply_rules, expert_rules
from .seam import DEFAULT_MIN_AXIAL_OVERLAP, stitch_seam
from .thresholds import DEFAULT_GLOBAL_FLOOR, ThresholdPolicy, filter_confidence

STAGES = ("filter", "nms", "merge", "stitch", "rules")
DEFAULT_STAGE_ORDER = ("filter", "merge", "stitch", "rules")


@dataclass
class PostprocResult:
    detections: list[Detection]
    spans: list[CylindricalSpan] = field(default_factory=list)
    audit: list[RuleEvent] = field(default_factory=list)

    def flat(self) -> list[Detection]:
        """Detections with every span expanded back into its two parts."""
        out = list(self.detections)
        for span in self.spans:
            out.extend(span.parts())
        return out


class DetectionPostprocessor(TransformerMixin, BaseEstimator):
    """Turns raw detections of one pipe into expert-facing detections.

    Stages run in ``stage_order`` (default filter, merge, stitch, rules).
    When filtering is enabled the confidence policy is applied once more
    after the last stage, so a detection pushed to or below its floor by a
    down-weighting rule is discarded as well.

    Parameters
    ----------
    global_floor : float
        Confidence at or below which detections are dropped.
    per_class_thresholds : dict or None
        Class code to threshold; the effective threshold is the larger of
        this and ``global_floor``.
    merge_iou, nms_iou : float
        Link threshold for component merging and suppression threshold for
        NMS (NMS only runs when listed in ``stage_order``).
    stitch_min_overlap : float
        Minimum axial overlap ratio for seam pairing.
    rules : list of Rule, "expert" or None
        ``"expert"`` loads the built-in down-weighting heuristics.
    """

    def __init__(
        self,
        global_floor=DEFAULT_GLOBAL_FLOOR,
        per_class_thresholds=None,
        merge_iou=DEFAULT_MERGE_IOU,
        nms_iou=0.5,
        stitch_min_overlap=DEFAULT_MIN_AXIAL_OVERLAP,
        rules="expert",
        stage_order=DEFAULT_STAGE_ORDER,
    ):
        self.global_floor = global_floor
        self.per_class_thresholds = per_class_thresholds
        self.merge_iou = merge_iou
        self.nms_iou = nms_iou
        self.stitch_min_overlap = stitch_min_overlap
        self.rules = rules
        self.stage_order = stage_order

    def _validate(self):
        unknown = [s for s in self.stage_order if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown postproc stages {unknown}; choose from {list(STAGES)}")
        if len(set(self.stage_order)) != len(self.stage_order):
            raise ConfigError("postproc stages may appear only once")
        self.policy_ = ThresholdPolicy(self.global_floor, self.per_class_thresholds or {})
        check_iou_threshold(self.merge_iou, "merge_iou")
        check_iou_threshold(self.nms_iou, "nms_iou")
        check_fraction(self.stitch_min_overlap, "stitch_min_overlap")
        if self.rules == "expert":
            self.rules_ = expert_rules()
        elif self.rules is None:
            self.rules_ = []
        elif all(isinstance(r, Rule) for r in self.rules):
            self.rules_ = list(self.rules)
        else:
            raise ConfigError("rules must be 'expert', None or a list of Rule objects")

    def fit(self, X=None, y=None):
        self._validate()
        return self

    def process(
        self,
        detections: Sequence[Detection],
        context: PipeContext | MosaicGeometry | None = None,
    ) -> PostprocResult:
        self._validate()
        if isinstance(context, MosaicGeometry):
            context = PipeContext.from_items(context, detections)
        dets = check_detections(detections, context.geometry if context else None)
        spans: list[CylindricalSpan] = []
        audit: list[RuleEvent] = []
        for stage in self.stage_order:
            if stage == "filter":
                dets = filter_confidence(dets, self.policy_)
            elif stage == "nms":
                dets = nms(dets, self.nms_iou)
            elif stage == "merge":
                dets = merge_connected(dets, self.merge_iou)
            elif stage == "stitch":
                if context is None:
                    audit.append(RuleEvent("stitch", "skipped", None, "no pipe context supplied"))
                    continue
                dets, new_spans = stitch_seam(dets, context.geometry, self.stitch_min_overlap)
                spans.extend(new_spans)
            elif stage == "rules":
                dets, events = apply_rules(dets, context, self.rules_)
                audit.extend(events)
        if "filter" in self.stage_order:
            dets = filter_confidence(dets, self.policy_)
            spans = [s for s in spans if s.confidence > self.policy_.threshold(s.cls)]
        return PostprocResult(dets, spans, audit)

    def transform(self, X):
        """``X`` is a sequence of ``(detections, context)`` pairs, one per pipe."""
        return [self.process(dets, ctx) for dets, ctx in X]


def identity_postprocessor() -> DetectionPostprocessor:
    """Configuration under which output detections equal input detections."""
    return DetectionPostprocessor(global_floor=0.0, rules=None, stage_order=())
