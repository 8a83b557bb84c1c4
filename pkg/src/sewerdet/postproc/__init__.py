from .assignment import AssignmentProblem, Matching, solve_assignment
from .merging import merge_connected, nms
from .pipeline import DetectionPostprocessor, PostprocResult, identity_postprocessor
from .rules import (
    Action,
    Atom,
    PipeContext,
    Rule,
    RuleEvent,
    apply_rules,
    expert_rules,
    format_ruleset,
    load_ruleset,
    parse_ruleset,
)
from .seam import stitch_seam
from .thresholds import ThresholdPolicy, filter_confidence

__all__ = [
    "Action",
    "AssignmentProblem",
    "Atom",
    "DetectionPostprocessor",
    "Matching",
    "PipeContext",
    "PostprocResult",
    "Rule",
    "RuleEvent",
    "ThresholdPolicy",
    "apply_rules",
    "expert_rules",
    "filter_confidence",
    "format_ruleset",
    "identity_postprocessor",
    "load_ruleset",
    "merge_connected",
    "nms",
    "parse_ruleset",
    "solve_assignment",
    "stitch_seam",
]
