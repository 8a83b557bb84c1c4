"""Declarative expert heuristics applied to detections in their pipe context.

A ruleset is a small text document, one rule per line::

    # roots grow in through joints and connections
    rule roots_away_from_joints: class_is(BBA) and min_distance_to_joint_or_connection_exceeds(1.0) -> scale_confidence(0.5)

Atoms are joined with ``and``; the action follows ``->``. Blank lines and
``#`` comments are ignored. Unknown atoms or actions are reported with the
offending line number. Rule order matters: rules run top to bottom for every
detection and a suppressed detection sees no further rules.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from ..core import DefectClass, Detection, Material, MosaicGeometry, PixelBox, axial_gap_px
from ..exceptions import MissingFileError, RuleSyntaxError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipeContext:
    geometry: MosaicGeometry
    connection_boxes: tuple[PixelBox, ...] = ()

    def __post_init__(self):
        boxes = tuple(self.connection_boxes)
        for b in boxes:
            if not self.geometry.contains(b):
                raise UsageError(f"connection box {b.as_list()} outside mosaic bounds")
        object.__setattr__(self, "connection_boxes", boxes)

    @property
    def joint_positions_px(self) -> tuple[int, ...]:
        return self.geometry.joint_positions_px

    @classmethod
    def from_items(cls, geometry: MosaicGeometry, items: Iterable = ()) -> PipeContext:
        """Collect connection boxes from any detections/annotations of class BCA."""
        boxes = [it.box for it in items if it.cls is DefectClass.CONNECTION]
        return cls(geometry, tuple(boxes))


# --- atoms -----------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    name: str
    args: tuple = ()

    def __post_init__(self):
        spec = ATOMS.get(self.name)
        if spec is None:
            raise UsageError(f"unknown atom {self.name!r}")
        object.__setattr__(self, "args", spec.coerce(self.args))

    def __str__(self):
        return f"{self.name}({', '.join(_fmt_arg(a) for a in self.args)})"


@dataclass(frozen=True)
class _AtomSpec:
    coerce: Callable[[tuple], tuple]
    needs: str  # "", "geometry" or "refs"


def _classes(args):
    if not args:
        raise UsageError("class_is needs at least one class code")
    return tuple(DefectClass.parse(a) for a in args)


def _materials(args):
    if not args:
        raise UsageError("material_is needs at least one material")
    return tuple(Material.parse(a) for a in args)


def _one_number(nonneg=True):
    def coerce(args):
        if len(args) != 1:
            raise UsageError("expected exactly one numeric argument")
        try:
            v = float(args[0])
        except (TypeError, ValueError):
            raise UsageError(f"expected a number, got {args[0]!r}") from None
        if nonneg and v < 0:
            raise UsageError(f"argument must be >= 0, got {v}")
        return (v,)
    return coerce


ATOMS = {
    "class_is": _AtomSpec(_classes, ""),
    "material_is": _AtomSpec(_materials, "geometry"),
    "min_distance_to_joint_or_connection_exceeds": _AtomSpec(_one_number(), "refs"),
    "within_distance_of_joint": _AtomSpec(_one_number(), "refs"),
    "vertical_extent_fraction_at_least": _AtomSpec(_one_number(), "geometry"),
    "aspect_ratio_h_over_w_at_least": _AtomSpec(_one_number(), ""),
}


def _axial_distances_m(det: Detection, ctx: PipeContext, joints: bool, connections: bool) -> list[float]:
    b = det.box
    # closed extent of the box along the axis
    lo, hi = b.x, b.x2
    out = []
    if joints:
        out += [axial_gap_px(lo, hi, j, j) for j in ctx.joint_positions_px]
    if connections:
        out += [axial_gap_px(lo, hi, c.x, c.x2) for c in ctx.connection_boxes if c != b]
    return [ctx.geometry.px_to_m(d) for d in out]


def _eval_atom(atom: Atom, det: Detection, ctx: PipeContext | None) -> bool:
    name, args = atom.name, atom.args
    if name == "class_is":
        return det.cls in args
    if name == "aspect_ratio_h_over_w_at_least":
        return det.box.h / det.box.w >= args[0]
    if name == "material_is":
        return ctx.geometry.material in args
    if name == "vertical_extent_fraction_at_least":
        return det.box.h / ctx.geometry.height_px >= args[0]
    if name == "min_distance_to_joint_or_connection_exceeds":
        dists = _axial_distances_m(det, ctx, joints=True, connections=True)
        return bool(dists) and min(dists) > args[0]
    if name == "within_distance_of_joint":
        return any(d <= args[0] for d in _axial_distances_m(det, ctx, joints=True, connections=False))
    raise AssertionError(name)  # pragma: no cover


# --- actions ---------------------------------------------------------------

ACTIONS = ("suppress", "scale_confidence", "tag")


@dataclass(frozen=True)
class Action:
    kind: str
    factor: float | None = None
    note: str | None = None

    def __post_init__(self):
        if self.kind not in ACTIONS:
            raise UsageError(f"unknown action {self.kind!r}")
        if self.kind == "scale_confidence":
            if self.factor is None or not 0.0 < float(self.factor) <= 1.0:
                raise UsageError(f"scale_confidence factor must lie in (0, 1], got {self.factor!r}")
            object.__setattr__(self, "factor", float(self.factor))
        if self.kind == "tag" and not self.note:
            raise UsageError("tag action needs a note")

    def __str__(self):
        if self.kind == "scale_confidence":
            return f"scale_confidence({_fmt_arg(self.factor)})"
        if self.kind == "tag":
            return f"tag({_fmt_arg(self.note)})"
        return "suppress"


@dataclass(frozen=True)
class Rule:
    name: str
    atoms: tuple[Atom, ...]
    action: Action

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise UsageError(f"rule {self.name!r} needs at least one atom")
        if not re.fullmatch(r"[A-Za-z_][\w.-]*", self.name or ""):
            raise UsageError(f"invalid rule name {self.name!r}")

    @property
    def needs(self) -> set[str]:
        return {ATOMS[a.name].needs for a in self.atoms} - {""}

    def matches(self, det: Detection, ctx: PipeContext | None) -> bool:
        return all(_eval_atom(a, det, ctx) for a in self.atoms)

    def __str__(self):
        return f"rule {self.name}: {' and '.join(map(str, self.atoms))} -> {self.action}"


@dataclass(frozen=True)
class RuleEvent:
    """One audit-trail entry; ``detection_id`` is None for rule-level warnings."""

    rule: str
    action: str
    detection_id: str | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"rule": self.rule, "action": self.action,
                "detection_id": self.detection_id, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> RuleEvent:
        return cls(d["rule"], d["action"], d.get("detection_id"), d.get("detail", ""))


def _skip_reason(rule: Rule, ctx: PipeContext | None) -> str | None:
    needs = rule.needs
    if needs and ctx is None:
        return "no pipe context supplied"
    if "refs" in needs and not ctx.joint_positions_px and not ctx.connection_boxes:
        return "pipe has neither joints nor connections"
    return None


def apply_rules(
    detections: Iterable[Detection],
    ctx: PipeContext | None,
    rules: Sequence[Rule],
) -> tuple[list[Detection], list[RuleEvent]]:
    """Run ``rules`` in order over every detection; returns survivors and audit trail."""
    dets = list(detections)
    events: list[RuleEvent] = []
    active = []
    for rule in rules:
        reason = _skip_reason(rule, ctx)
        if reason is None:
            active.append(rule)
        else:
            logger.warning("rule %s skipped: %s", rule.name, reason)
            events.append(RuleEvent(rule.name, "skipped", None, reason))

    out = []
    for det in dets:
        alive = True
        for rule in active:
            if not rule.matches(det, ctx):
                continue
            act = rule.action
            if act.kind == "suppress":
                events.append(RuleEvent(rule.name, "suppress", det.id))
                alive = False
                break
            if act.kind == "scale_confidence":
                new_conf = min(1.0, max(0.0, det.confidence * act.factor))
                events.append(RuleEvent(rule.name, "scale_confidence", det.id,
                                        f"{det.confidence:.6g} -> {new_conf:.6g}"))
                det = replace(det, confidence=new_conf)
            else:
                events.append(RuleEvent(rule.name, "tag", det.id, act.note))
                if act.note not in det.notes:
                    det = replace(det, notes=det.notes + (act.note,))
        if alive:
            out.append(det)
    return out, events


# --- text format -----------------------------------------------------------

_RULE_RE = re.compile(r"^rule\s+(?P<name>[^:\s]+)\s*:\s*(?P<body>.*?)\s*->\s*(?P<action>.+?)\s*$")
_CALL_RE = re.compile(r"^(?P<name>[A-Za-z_]\w*)\s*(?:\((?P<args>.*)\))?$")


def _fmt_arg(a) -> str:
    if isinstance(a, float):
        return repr(a)
    if isinstance(a, (DefectClass, Material)):
        return a.value
    s = str(a)
    if re.fullmatch(r"[\w.-]+", s):
        return s
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _split_args(text: str) -> list[str]:
    args, buf, quoted, escaped = [], [], False, False
    was_quoted = False
    for ch in text:
        if escaped:
            buf.append(ch)
            escaped = False
        elif quoted and ch == "\\":
            escaped = True
        elif ch == '"':
            if not quoted and not was_quoted and not "".join(buf).strip():
                buf = []
            quoted = not quoted
            was_quoted = True
        elif ch == "," and not quoted:
            args.append("".join(buf) if was_quoted else "".join(buf).strip())
            buf, was_quoted = [], False
        elif not quoted and ch.isspace() and was_quoted:
            continue
        else:
            buf.append(ch)
    if quoted:
        raise UsageError("unterminated string")
    tail = "".join(buf) if was_quoted else "".join(buf).strip()
    if tail or args or was_quoted:
        args.append(tail)
    return args


def _parse_call(text: str):
    m = _CALL_RE.match(text.strip())
    if not m:
        raise UsageError(f"cannot parse {text.strip()!r}")
    raw = m.group("args")
    return m.group("name"), tuple(_split_args(raw)) if raw is not None else ()


def parse_rule(line: str) -> Rule:
    m = _RULE_RE.match(line.strip())
    if not m:
        raise UsageError("expected 'rule <name>: <atom> [and <atom>...] -> <action>'")
    atoms = []
    for part in re.split(r"\s+and\s+", m.group("body")):
        if not part.strip():
            raise UsageError("empty condition")
        name, args = _parse_call(part)
        if name not in ATOMS:
            raise UsageError(f"unknown atom {name!r} (known: {', '.join(sorted(ATOMS))})")
        atoms.append(Atom(name, args))
    name, args = _parse_call(m.group("action"))
    if name not in ACTIONS:
        raise UsageError(f"unknown action {name!r} (known: {', '.join(ACTIONS)})")
    if name == "suppress":
        if args:
            raise UsageError("suppress takes no arguments")
        action = Action("suppress")
    elif name == "scale_confidence":
        if len(args) != 1:
            raise UsageError("scale_confidence takes one factor")
        try:
            action = Action("scale_confidence", factor=float(args[0]))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        if len(args) != 1:
            raise UsageError("tag takes one note")
        action = Action("tag", note=args[0])
    return Rule(m.group("name"), tuple(atoms), action)


def parse_ruleset(text: str, source: str = "<ruleset>") -> list[Rule]:
    rules, names = [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rule = parse_rule(line)
        except UsageError as exc:
            raise RuleSyntaxError(str(exc), lineno, source) from None
        if rule.name in names:
            raise RuleSyntaxError(f"duplicate rule name {rule.name!r}", lineno, source)
        names.add(rule.name)
        rules.append(rule)
    return rules


def load_ruleset(path) -> list[Rule]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"ruleset not found: {path}")
    return parse_ruleset(path.read_text(encoding="utf-8"), source=str(path))


def format_ruleset(rules: Sequence[Rule]) -> str:
    return "".join(f"{r}\n" for r in rules)


EXPERT_RULESET = """\
# Expert heuristics for unrolled sewer mosaics. Distances are axial, in meters.
# Roots grow in through joints and branch connections only.
rule roots_away_from_joints: class_is(BBA) and min_distance_to_joint_or_connection_exceeds(1.0) -> scale_confidence(0.5)
# Joints absorb the forces that crack pipes circumferentially.
rule circumferential_fissure_at_joint: class_is(BAB) and within_distance_of_joint(0.3) and vertical_extent_fraction_at_least(0.5) and aspect_ratio_h_over_w_at_least(2) -> scale_confidence(0.5)
# Glaze shrinkage cracks near joints of clay pipes are cosmetic.
rule glaze_fissure: material_is(vitrified_clay) and class_is(BAB) and within_distance_of_joint(0.3) -> tag("possible glaze fissure, structurally unproblematic")
# Vitrified clay resists chemical corrosion.
rule surface_damage_in_clay: material_is(vitrified_clay) and class_is(BAF) -> scale_confidence(0.8)
"""


def expert_rules() -> list[Rule]:
    """The built-in heuristics; every action down-weights or tags, none suppresses."""
    return parse_ruleset(EXPERT_RULESET, source="<expert>")
