"""Command line: ``sewerdet {synth,tile,postproc,eval,report}``.

Settings resolve in this order, later wins: built-in defaults, the JSON
file given with ``--config``, ``SEWERDET_<FIELD>`` environment variables,
command-line flags. Every output records the seed and a hash of the
resolved settings.

Randomness: pipe ``i`` of a synth run is generated from ``[seed, i, 0]``
and its detections from ``[seed, i, 1]``; tile flips for patch ``k`` of
input ``i`` come from ``[seed, i, k]``.

Errors print one JSON object ``{"error": <category>, "message": ...}`` to
stderr and exit with the category's code (see :mod:`sewerdet.exceptions`).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .core import DefectClass
from .exceptions import ConfigError, InfeasibleError, MissingFileError, SchemaError, SewerdetError
from .io import (
    InterchangeDocument,
    load_document,
    provenance,
    read_json,
    save_document,
    write_json_atomic,
)
from .metrics import ConfusionCounts, PipeData, evaluate, report_from_counts
from .postproc import DetectionPostprocessor, PipeContext, expert_rules, load_ruleset
from .postproc.pipeline import DEFAULT_STAGE_ORDER, STAGES
from .synth import DetectorProfile, PipeSpec, generate_pipe, render_overlay, simulate_detector, write_ppm
from .tiler import export_training_set, to_network_frame
from .metrics.ap import COCO_IOU_THRESHOLDS

ENV_PREFIX = "SEWERDET_"

PROFILES = {
    "perfect": DetectorProfile.perfect,
    "default": DetectorProfile,
    "seam": lambda: dataclasses.replace(DetectorProfile.perfect(), seam_split=True, seam_shift_probability=0.2),
    "none": None,
}


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    # tiler
    patch_size_px: int = 1200
    stride_px: int = 600
    scale: str = "640/1200"
    min_visible_fraction: float = 0.25
    flip_probability: float = 0.25
    # postproc
    global_floor: float = 0.10
    per_class_thresholds: dict = dataclasses.field(default_factory=dict)
    merge_iou: float = 0.2
    nms_iou: float = 0.5
    stitch_min_overlap: float = 0.1
    ruleset: str = "expert"
    stages: list = dataclasses.field(default_factory=lambda: list(DEFAULT_STAGE_ORDER))
    # metrics
    chunk_width: int = 600
    match_iou: float = 0.5
    iou_thresholds: list = dataclasses.field(default_factory=lambda: list(COCO_IOU_THRESHOLDS))
    # synth
    n_pipes: int = 1
    pipe_spec: dict = dataclasses.field(default_factory=dict)
    profile: Any = "default"
    overlay: bool = False
    max_pixels: int = 40_000_000

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def result_dict(self) -> dict:
        """Settings that can change results; worker count is left out of the hash."""
        d = self.to_dict()
        d.pop("jobs")
        return d

    @property
    def scale_value(self) -> Fraction:
        return _parse_scale(self.scale)

    def validate(self) -> RunConfig:
        def rng(name, lo, hi, lo_open=False):
            v = getattr(self, name)
            ok = (v > lo if lo_open else v >= lo) and v <= hi
            if not ok:
                raise ConfigError(f"{name}={v!r} outside {'(' if lo_open else '['}{lo}, {hi}]")

        for name in ("seed",):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 0:
                raise ConfigError(f"{name} must be a non-negative integer")
        for name in ("jobs", "patch_size_px", "stride_px", "chunk_width", "n_pipes", "max_pixels"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("min_visible_fraction", "flip_probability", "global_floor", "stitch_min_overlap"):
            rng(name, 0, 1)
        for name in ("merge_iou", "nms_iou", "match_iou"):
            rng(name, 0, 1, lo_open=True)
        if not self.iou_thresholds or not all(0 < float(t) <= 1 for t in self.iou_thresholds):
            raise ConfigError("iou_thresholds must be a non-empty list of values in (0, 1]")
        for k, v in self.per_class_thresholds.items():
            try:
                DefectClass.parse(k)
            except SewerdetError:
                raise ConfigError(f"per_class_thresholds: unknown class {k!r}") from None
            if not 0 <= float(v) <= 1:
                raise ConfigError(f"per_class_thresholds[{k}] outside [0, 1]")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown or len(set(self.stages)) != len(self.stages):
            raise ConfigError(f"stages must be distinct names from {list(STAGES)}, got {self.stages}")
        try:
            scale = self.scale_value
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"scale {self.scale!r} is not a positive number or ratio") from None
        if scale <= 0:
            raise ConfigError("scale must be > 0")
        if self.stride_px > self.patch_size_px:
            raise InfeasibleError(
                f"stride_px={self.stride_px} exceeds patch_size_px={self.patch_size_px}: columns would be skipped"
            )
        return self


def _parse_scale(text) -> Fraction:
    if isinstance(text, (int, float)):
        return Fraction(text).limit_denominator(10**6)
    return Fraction(str(text).strip())


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
SECTIONS = ("tiler", "postproc", "metrics", "synth")


def _flatten(data: dict, source: str) -> dict:
    flat = {}
    for key, value in data.items():
        if key in SECTIONS and isinstance(value, dict):
            flat.update(_flatten(value, source))
        elif key in FIELDS:
            flat[key] = value
        else:
            raise ConfigError(f"{source}: unknown setting {key!r}")
    return flat


def _env_overrides(environ) -> dict:
    out = {}
    for name in FIELDS:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is None:
            continue
        try:
            out[name] = json.loads(raw)
        except json.JSONDecodeError:
            out[name] = raw
    return out


def resolve_config(config_path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    values: dict = {}
    if config_path:
        data = read_json(config_path)
        if not isinstance(data, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        values.update(_flatten(data, str(config_path)))
    values.update(_env_overrides(os.environ if environ is None else environ))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


# --- per-pipe workers (module level so they pickle) ---------------------------

def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _resolve_profile(profile) -> DetectorProfile | None:
    if isinstance(profile, dict):
        try:
            return DetectorProfile(**profile)
        except TypeError as exc:
            raise ConfigError(f"profile: {exc}") from None
    if isinstance(profile, str):
        if profile in PROFILES:
            factory = PROFILES[profile]
            return None if factory is None else factory()
        path = Path(profile)
        if path.suffix == ".json":
            return _resolve_profile(read_json(path))
    raise ConfigError(f"profile must be one of {sorted(PROFILES)}, a JSON file or an object; got {profile!r}")


def _synth_one(args):
    index, cfg_dict, out_dir = args
    cfg = RunConfig(**cfg_dict)
    spec_kwargs = dict(cfg.pipe_spec)
    base = spec_kwargs.get("pipe_id")
    if base is None:
        spec_kwargs["pipe_id"] = f"pipe{index:04d}"
    elif cfg.n_pipes > 1:
        spec_kwargs["pipe_id"] = f"{base}{index:04d}"
    spec = PipeSpec(**spec_kwargs)
    geometry, annotations = generate_pipe(spec, [cfg.seed, index, 0])
    profile = _resolve_profile(cfg.profile)
    detections = simulate_detector(annotations, profile, [cfg.seed, index, 1], geometry) if profile else []
    prov = provenance(cfg.seed, cfg.result_dict(), "synth")
    prov["pipe_index"] = index
    doc = InterchangeDocument(geometry, annotations, detections, provenance=prov)
    path = Path(out_dir) / f"{geometry.pipe_id}.json"
    save_document(doc, path)
    if cfg.overlay:
        write_ppm(Path(out_dir) / f"{geometry.pipe_id}.ppm",
                  render_overlay(geometry, annotations, detections, seed=cfg.seed, max_pixels=cfg.max_pixels))
    return str(path)


def _postprocessor(cfg: RunConfig) -> DetectionPostprocessor:
    if cfg.ruleset == "expert":
        rules = expert_rules()
    elif cfg.ruleset in ("none", "", None):
        rules = None
    else:
        rules = load_ruleset(cfg.ruleset)
    return DetectionPostprocessor(
        global_floor=cfg.global_floor,
        per_class_thresholds=cfg.per_class_thresholds,
        merge_iou=cfg.merge_iou,
        nms_iou=cfg.nms_iou,
        stitch_min_overlap=cfg.stitch_min_overlap,
        rules=rules,
        stage_order=tuple(cfg.stages),
    )


def _postproc_one(args):
    in_path, cfg_dict, out_dir = args
    cfg = RunConfig(**cfg_dict)
    doc = load_document(in_path)
    dets = doc.flat_detections()
    ctx = PipeContext.from_items(doc.geometry, list(doc.annotations) + dets)
    result = _postprocessor(cfg).process(dets, ctx)
    prov = provenance(cfg.seed, cfg.result_dict(), "postproc")
    prov["source"] = Path(in_path).name
    out = InterchangeDocument(doc.geometry, doc.annotations, result.detections, result.spans,
                              result.audit, prov)
    path = Path(out_dir) / Path(in_path).name
    save_document(out, path)
    return str(path)


def _overlay_one(args):
    in_path, cfg_dict, out_dir = args
    cfg = RunConfig(**cfg_dict)
    doc = load_document(in_path)
    path = Path(out_dir) / f"{doc.geometry.pipe_id}.ppm"
    write_ppm(path, render_overlay(doc.geometry, doc.annotations, doc.flat_detections(),
                                   seed=cfg.seed, max_pixels=cfg.max_pixels))
    return str(path)


# --- commands --------------------------------------------------------------

def _inputs(paths: Sequence[str]) -> list[Path]:
    """Expand directories to their ``*.json`` files; order is sorted per directory."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(q for q in p.glob("*.json")))
        elif p.is_file():
            out.append(p)
        else:
            raise MissingFileError(f"no such file or directory: {p}")
    if not out:
        raise MissingFileError("no input documents found")
    return out


def cmd_synth(cfg: RunConfig, out_dir) -> list[str]:
    _resolve_profile(cfg.profile)  # fail early on a bad profile
    try:
        PipeSpec(**cfg.pipe_spec)
    except TypeError as exc:
        raise ConfigError(f"pipe_spec: {exc}") from None
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(i, cfg.to_dict(), str(out_dir)) for i in range(cfg.n_pipes)]
    return _map(_synth_one, jobs, cfg.jobs)


def tile_records(cfg: RunConfig, docs: Sequence[InterchangeDocument]) -> list[dict]:
    scale = cfg.scale_value
    pipes = [(d.geometry, d.annotations) for d in docs]
    records = []
    for s in export_training_set(
        pipes, cfg.seed,
        patch_size_px=cfg.patch_size_px, stride_px=cfg.stride_px, scale=scale,
        min_visible_fraction=cfg.min_visible_fraction, flip_probability=cfg.flip_probability,
    ):
        records.append({
            "pipe_id": s.pipe_id,
            "window_offset_px": s.window_offset_px,
            "patch_size_px": s.patch_size_px,
            "scale": str(scale),
            "flip_ud": s.flip_ud,
            "flip_lr": s.flip_lr,
            "labels": [
                {
                    "class": lab.cls.code,
                    "source_id": lab.source_id,
                    "box_patch": lab.box.as_list(),
                    "box_network": [float(v) for v in to_network_frame(lab.box, scale)],
                }
                for lab in s.labels
            ],
        })
    return records


def cmd_tile(cfg: RunConfig, inputs, out_path) -> int:
    docs = [load_document(p) for p in _inputs(inputs)]
    records = tile_records(cfg, docs)
    header = {"manifest": "sewerdet-tiles", "schema_version": "1.0",
              "provenance": provenance(cfg.seed, cfg.result_dict(), "tile"),
              "inputs": [d.geometry.pipe_id for d in docs]}
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(f".{out_path.name}.tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for rec in [header] + records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, out_path)
    return len(records)


def cmd_postproc(cfg: RunConfig, inputs, out_dir) -> list[str]:
    if cfg.ruleset not in ("expert", "none", "", None):
        load_ruleset(cfg.ruleset)  # report ruleset errors once, before any work
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), cfg.to_dict(), str(out_dir)) for p in _inputs(inputs)]
    return _map(_postproc_one, jobs, cfg.jobs)


def _load_counts(path) -> tuple[ConfusionCounts, int | None]:
    data = read_json(path)
    try:
        c = data["counts"]
        counts = ConfusionCounts(int(c["tp"]), int(c["fp"]), int(c["tn"]), int(c["fn"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: counts document needs counts.tp/fp/tn/fn ({exc})") from None
    total = data.get("total_chunks")
    return counts, None if total is None else int(total)


def build_report(cfg: RunConfig, inputs=None, counts_path=None):
    if counts_path:
        counts, total = _load_counts(counts_path)
        return report_from_counts(counts, total)
    docs = [load_document(p) for p in _inputs(inputs)]
    pipes = [PipeData(d.geometry, d.annotations, d.flat_detections()) for d in docs]
    return evaluate(pipes, cfg.chunk_width, cfg.match_iou, [float(t) for t in cfg.iou_thresholds])


def cmd_eval(cfg: RunConfig, inputs, out_path, text_path=None, counts_path=None):
    report = build_report(cfg, inputs, counts_path)
    payload = report.to_dict()
    payload["provenance"] = provenance(cfg.seed, cfg.result_dict(), "eval")
    write_json_atomic(out_path, payload)
    text = report.format_text()
    if text_path:
        Path(text_path).write_text(text, encoding="utf-8")
    return report, text


def cmd_report(cfg: RunConfig, inputs, out_dir):
    paths = _inputs(inputs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overlays = _map(_overlay_one, [(str(p), cfg.to_dict(), str(out_dir)) for p in paths], cfg.jobs)
    report = build_report(cfg, [str(p) for p in paths])
    lines = ["Per-pipe running meters", "======================="]
    lines.append(f"{'pipe':<20}{'meters':>10}{'TP':>6}{'FP':>6}{'TN':>6}{'FN':>6}")
    for p in report.pipes:
        c = p.counts
        lines.append(f"{p.pipe_id:<20}{p.meters:>10.2f}{c.tp:>6}{c.fp:>6}{c.tn:>6}{c.fn:>6}")
    text = "\n".join(lines) + "\n\n" + report.format_text()
    payload = report.to_dict()
    payload["overlays"] = [Path(o).name for o in overlays]
    payload["provenance"] = provenance(cfg.seed, cfg.result_dict(), "report")
    write_json_atomic(out_dir / "summary.json", payload)
    (out_dir / "summary.txt").write_text(text, encoding="utf-8")
    return report, text


# --- argument parsing --------------------------------------------------------

def _class_threshold(text: str):
    try:
        code, value = text.split("=", 1)
        return DefectClass.parse(code).code, float(value)
    except (ValueError, SewerdetError):
        raise argparse.ArgumentTypeError(f"expected CODE=THRESHOLD, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="parallel workers for per-pipe work")

    parser = argparse.ArgumentParser(prog="sewerdet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sewerdet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic pipes and detections")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-pipes", type=int, dest="n_pipes")
    p.add_argument("--length-m", type=float)
    p.add_argument("--px-per-meter", type=float)
    p.add_argument("--material")
    p.add_argument("--profile", help="perfect | default | seam | none | profile.json")
    p.add_argument("--overlay", action="store_true", default=None, help="also write a .ppm overlay per pipe")

    p = sub.add_parser("tile", parents=[common], help="write a training-patch manifest")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="manifest path (JSON lines)")
    p.add_argument("--patch", type=int, dest="patch_size_px")
    p.add_argument("--stride", type=int, dest="stride_px")
    p.add_argument("--scale", help="network/patch edge ratio, e.g. 640/1200")
    p.add_argument("--min-visible", type=float, dest="min_visible_fraction")
    p.add_argument("--flip-probability", type=float, dest="flip_probability")

    p = sub.add_parser("postproc", parents=[common], help="filter, merge, stitch and apply rules")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ruleset", help="ruleset file, 'expert' or 'none'")
    p.add_argument("--floor", type=float, dest="global_floor")
    p.add_argument("--class-threshold", type=_class_threshold, action="append", metavar="CODE=T")
    p.add_argument("--merge-iou", type=float, dest="merge_iou")
    p.add_argument("--nms-iou", type=float, dest="nms_iou")
    p.add_argument("--stitch-overlap", type=float, dest="stitch_min_overlap")
    p.add_argument("--stages", help=f"comma separated subset of {','.join(STAGES)} (empty for none)")

    for name, helptext in (("eval", "evaluate detections against annotations"),
                           ("report", "overlays plus a combined multi-pipe summary")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("inputs", nargs="*")
        p.add_argument("--out", required=True,
                       help="report JSON path" if name == "eval" else "output directory")
        p.add_argument("--chunk-width", type=int, dest="chunk_width")
        p.add_argument("--iou", type=float, dest="match_iou", help="IoU for object-level matching")
        if name == "eval":
            p.add_argument("--text", help="also write the human-readable tables here")
            p.add_argument("--counts", help="evaluate a published counts document instead of pipes")
    return parser


def _overrides(args) -> dict:
    keys = ("seed", "jobs", "n_pipes", "patch_size_px", "stride_px", "scale", "min_visible_fraction",
            "flip_probability", "ruleset", "global_floor", "merge_iou", "nms_iou",
            "stitch_min_overlap", "chunk_width", "match_iou", "profile", "overlay")
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "class_threshold", None):
        out["per_class_thresholds"] = dict(args.class_threshold)
    if getattr(args, "stages", None) is not None:
        out["stages"] = [s.strip() for s in args.stages.split(",") if s.strip()]
    return out


def _spec_overrides(args, cfg: RunConfig) -> RunConfig:
    spec = dict(cfg.pipe_spec)
    for flag, key in (("length_m", "length_m"), ("px_per_meter", "px_per_meter_axial"), ("material", "material")):
        v = getattr(args, flag, None)
        if v is not None:
            spec[key] = v
    return dataclasses.replace(cfg, pipe_spec=spec)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = resolve_config(args.config, _overrides(args))
    if args.command == "synth":
        cfg = _spec_overrides(args, cfg)
        paths = cmd_synth(cfg, args.out)
        print(f"wrote {len(paths)} pipe document(s) to {args.out}")
    elif args.command == "tile":
        n = cmd_tile(cfg, args.inputs, args.out)
        print(f"wrote {n} patch record(s) to {args.out}")
    elif args.command == "postproc":
        paths = cmd_postproc(cfg, args.inputs, args.out)
        print(f"wrote {len(paths)} processed document(s) to {args.out}")
    elif args.command == "eval":
        if not args.inputs and not args.counts:
            raise ConfigError("eval needs input documents or --counts")
        _, text = cmd_eval(cfg, args.inputs, args.out, args.text, args.counts)
        sys.stdout.write(text)
    elif args.command == "report":
        if not args.inputs:
            raise ConfigError("report needs input documents")
        _, text = cmd_report(cfg, args.inputs, args.out)
        sys.stdout.write(text)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return run(argv)
    except SewerdetError as exc:
        sys.stderr.write(json.dumps({"error": exc.category, "message": str(exc)}) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
