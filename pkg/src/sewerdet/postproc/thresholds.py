from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..core import DefectClass, Detection
from ..validation import check_fraction

# detections at or below 10 % confidence are negligible false positives
DEFAULT_GLOBAL_FLOOR = 0.10


@dataclass(frozen=True)
class ThresholdPolicy:
    """Minimum confidence per class; a detection survives only strictly above it."""

    global_floor: float = DEFAULT_GLOBAL_FLOOR
    per_class: Mapping[DefectClass, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "global_floor", check_fraction(self.global_floor, "global_floor"))
        normalized = {
            DefectClass.parse(k): check_fraction(v, f"threshold for {k}")
            for k, v in dict(self.per_class).items()
        }
        object.__setattr__(self, "per_class", normalized)

    def threshold(self, cls: DefectClass) -> float:
        return max(self.global_floor, self.per_class.get(cls, self.global_floor))

    def keeps(self, det: Detection) -> bool:
        return det.confidence > self.threshold(det.cls)

    def to_dict(self) -> dict:
        return {
            "global_floor": self.global_floor,
            "per_class": {k.code: v for k, v in sorted(self.per_class.items(), key=lambda kv: kv[0].code)},
        }

    @classmethod
    def from_dict(cls, data: Mapping | None) -> ThresholdPolicy:
        data = dict(data or {})
        return cls(
            global_floor=data.get("global_floor", DEFAULT_GLOBAL_FLOOR),
            per_class=data.get("per_class", {}),
        )


def filter_confidence(detections: Iterable[Detection], policy: ThresholdPolicy | None = None) -> list[Detection]:
    policy = ThresholdPolicy() if policy is None else policy
    return [d for d in detections if policy.keeps(d)]
