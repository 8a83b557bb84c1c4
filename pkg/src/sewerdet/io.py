"""JSON interchange documents: one pipe per file.

Layout (``schema_version`` "1.0")::

    {
      "schema_version": "1.0",
      "pipe": {"pipe_id", "width_px", "height_px", "px_per_meter_axial",
               "material", "joint_positions_px"},
      "annotations": [{"id", "box": [x, y, w, h], "class", "severity"}],
      "detections": [{"id", "box", "class", "confidence", "merged_from", "notes"}],
      "spans": [{"top_box", "bottom_box", "class", "confidence", "source_ids"}],
      "audit": [{"rule", "action", "detection_id", "detail"}],
      "provenance": {"tool_version", "seed", "config_hash", "command"}
    }

``spans`` and ``audit`` are only written by the postproc command.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .core import (
    Annotation,
    CylindricalSpan,
    DefectClass,
    Detection,
    MosaicGeometry,
    PixelBox,
    SeverityClass,
)
from .exceptions import MissingFileError, SchemaError, SewerdetError
from .postproc.rules import RuleEvent

SCHEMA_VERSION = "1.0"


def document_schema() -> dict:
    """The published JSON Schema for interchange documents."""
    text = resources.files("sewerdet").joinpath(f"schemas/interchange-{SCHEMA_VERSION}.schema.json").read_text()
    return json.loads(text)


@dataclass
class InterchangeDocument:
    geometry: MosaicGeometry
    annotations: list[Annotation] = field(default_factory=list)
    detections: list[Detection] = field(default_factory=list)
    spans: list[CylindricalSpan] = field(default_factory=list)
    audit: list[RuleEvent] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def flat_detections(self) -> list[Detection]:
        out = list(self.detections)
        for span in self.spans:
            out.extend(span.parts())
        return out


def config_hash(config: Any) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def provenance(seed=None, config=None, command: str | None = None) -> dict:
    return {
        "tool_version": __version__,
        "seed": seed,
        "config_hash": config_hash(config) if config is not None else None,
        "command": command,
    }


# --- to json -----------------------------------------------------------------

def geometry_to_dict(g: MosaicGeometry) -> dict:
    return {
        "pipe_id": g.pipe_id,
        "width_px": g.width_px,
        "height_px": g.height_px,
        "px_per_meter_axial": g.px_per_meter_axial,
        "material": g.material.value,
        "joint_positions_px": list(g.joint_positions_px),
    }


def annotation_to_dict(a: Annotation) -> dict:
    return {"id": a.id, "box": a.box.as_list(), "class": a.cls.code, "severity": int(a.severity)}


def detection_to_dict(d: Detection) -> dict:
    return {
        "id": d.id,
        "box": d.box.as_list(),
        "class": d.cls.code,
        "confidence": d.confidence,
        "merged_from": list(d.merged_from),
        "notes": list(d.notes),
    }


def span_to_dict(s: CylindricalSpan) -> dict:
    return {
        "top_box": s.top_part.as_list(),
        "bottom_box": s.bottom_part.as_list(),
        "class": s.cls.code,
        "confidence": s.confidence,
        "source_ids": list(s.source_ids),
    }


def document_to_dict(doc: InterchangeDocument) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "pipe": geometry_to_dict(doc.geometry),
        "annotations": [annotation_to_dict(a) for a in doc.annotations],
        "detections": [detection_to_dict(d) for d in doc.detections],
    }
    if doc.spans:
        out["spans"] = [span_to_dict(s) for s in doc.spans]
    if doc.audit:
        out["audit"] = [e.to_dict() for e in doc.audit]
    out["provenance"] = dict(doc.provenance)
    return out


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json_atomic(path, obj: Any) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps(obj))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_document(doc: InterchangeDocument, path) -> None:
    write_json_atomic(path, document_to_dict(doc))


# --- from json ---------------------------------------------------------------

def _box(raw, where: str) -> PixelBox:
    if not isinstance(raw, list) or len(raw) != 4 or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw):
        raise SchemaError(f"{where}: box must be a list of four integers [x, y, w, h]")
    try:
        return PixelBox(*raw)
    except SewerdetError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def _cls(raw, where: str) -> DefectClass:
    try:
        return DefectClass.parse(raw)
    except SewerdetError:
        raise SchemaError(f"{where}: unknown class code {raw!r}") from None


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"{where}: missing field {key!r}")
    return d[key]


def _in_bounds(box: PixelBox, g: MosaicGeometry, where: str) -> PixelBox:
    if not g.contains(box):
        raise SchemaError(f"{where}: box {box.as_list()} outside mosaic {g.width_px}x{g.height_px}")
    return box


def geometry_from_dict(d: dict) -> MosaicGeometry:
    try:
        return MosaicGeometry(
            pipe_id=str(_require(d, "pipe_id", "pipe")),
            width_px=_require(d, "width_px", "pipe"),
            height_px=d.get("height_px", 1200),
            px_per_meter_axial=float(_require(d, "px_per_meter_axial", "pipe")),
            material=d.get("material", "other"),
            joint_positions_px=tuple(d.get("joint_positions_px", ())),
        )
    except SchemaError:
        raise
    except (SewerdetError, TypeError, ValueError) as exc:
        raise SchemaError(f"pipe: {exc}") from None


def document_from_dict(data: dict) -> InterchangeDocument:
    if not isinstance(data, dict):
        raise SchemaError("document must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION!r})")
    g = geometry_from_dict(_require(data, "pipe", "document"))
    anns, dets, spans, audit = [], [], [], []
    for i, a in enumerate(data.get("annotations", [])):
        where = f"annotations[{i}]"
        box = _in_bounds(_box(_require(a, "box", where), where), g, where)
        cls = _cls(_require(a, "class", where), where)
        sev = a.get("severity")
        if sev is None and not cls.is_structural:
            raise SchemaError(f"{where}: defect annotations need a severity")
        try:
            anns.append(Annotation(str(_require(a, "id", where)), box, cls,
                                   None if sev is None else SeverityClass(int(sev))))
        except (SewerdetError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from None
    for i, d in enumerate(data.get("detections", [])):
        where = f"detections[{i}]"
        box = _in_bounds(_box(_require(d, "box", where), where), g, where)
        try:
            dets.append(Detection(
                str(_require(d, "id", where)), box, _cls(_require(d, "class", where), where),
                float(_require(d, "confidence", where)),
                tuple(d.get("merged_from", ())), tuple(d.get("notes", ())),
            ))
        except SchemaError:
            raise
        except (SewerdetError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from None
    for i, s in enumerate(data.get("spans", [])):
        where = f"spans[{i}]"
        try:
            spans.append(CylindricalSpan(
                _in_bounds(_box(_require(s, "top_box", where), where), g, where),
                _in_bounds(_box(_require(s, "bottom_box", where), where), g, where),
                _cls(_require(s, "class", where), where),
                float(_require(s, "confidence", where)),
                g.height_px,
                tuple(s.get("source_ids", ("", ""))),
            ))
        except SchemaError:
            raise
        except (SewerdetError, TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from None
    for i, e in enumerate(data.get("audit", [])):
        try:
            audit.append(RuleEvent.from_dict(e))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"audit[{i}]: {exc}") from None
    return InterchangeDocument(g, anns, dets, spans, audit, dict(data.get("provenance", {})))


def read_json(path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None


def load_document(path) -> InterchangeDocument:
    try:
        return document_from_dict(read_json(path))
    except SchemaError as exc:
        if str(path) in str(exc):
            raise
        raise SchemaError(f"{path}: {exc}") from None
