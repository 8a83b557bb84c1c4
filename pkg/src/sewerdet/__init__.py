"""Detection post-processing and evaluation tooling for unrolled sewer-pipe mosaics."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Annotation,
    CylindricalSpan,
    DefectClass,
    Detection,
    Material,
    MosaicGeometry,
    PixelBox,
    SeverityClass,
    axial_overlap_ratio,
    enclosing_box,
    iou,
)
from .exceptions import (  # noqa: E402
    ConfigError,
    InfeasibleError,
    MissingFileError,
    RuleSyntaxError,
    SchemaError,
    SewerdetError,
    UsageError,
)
from .metrics import DetectionEvaluator, EvalReport, evaluate  # noqa: E402
from .postproc import DetectionPostprocessor  # noqa: E402
from .synth import DetectorProfile, PipeSpec, SimulatedDetector, generate_pipe, simulate_detector  # noqa: E402
from .tiler import MosaicTiler  # noqa: E402

__all__ = [
    "Annotation",
    "ConfigError",
    "CylindricalSpan",
    "DefectClass",
    "Detection",
    "DetectionEvaluator",
    "DetectionPostprocessor",
    "DetectorProfile",
    "EvalReport",
    "InfeasibleError",
    "Material",
    "MissingFileError",
    "MosaicGeometry",
    "MosaicTiler",
    "PipeSpec",
    "PixelBox",
    "RuleSyntaxError",
    "SchemaError",
    "SeverityClass",
    "SewerdetError",
    "SimulatedDetector",
    "UsageError",
    "__version__",
    "axial_overlap_ratio",
    "enclosing_box",
    "evaluate",
    "generate_pipe",
    "iou",
    "simulate_detector",
]
