import json
import subprocess
import sys
from pathlib import Path

import pytest

from sewerdet.cli import main, resolve_config
from sewerdet.exceptions import ConfigError, InfeasibleError
from sewerdet.io import load_document

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])["error"]


@pytest.fixture
def pipes(tmp_path, capsys):
    out = tmp_path / "pipes"
    code, _, _ = run(capsys, "synth", "--out", out, "--n-pipes", 2, "--length-m", 30, "--profile", "default",
                     "--seed", 3)
    assert code == 0
    return out


def test_eval_published_counts_fixture(tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--counts", FIXTURES / "published_counts.json", "--out", tmp_path / "r.json")
    assert code == 0 and "accuracy:  73.06%" in out
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["running_meters"]["total_chunks"] == 1147
    assert round(report["running_meters"]["accuracy"], 4) == 0.7306


def test_golden_counts_report_via_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "sewerdet", "eval", "--counts", str(FIXTURES / "published_counts.json"),
         "--out", str(tmp_path / "r.json")],
        capture_output=True, text=True, check=True,
    )
    assert proc.stdout == (FIXTURES / "published_counts_report.txt").read_text()


def test_synth_then_eval_perfect_profile(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--out", tmp_path / "p", "--n-pipes", 3, "--length-m", 40,
                     "--profile", "perfect", "--seed", 1)
    assert code == 0
    code, _, _ = run(capsys, "postproc", tmp_path / "p", "--out", tmp_path / "q")
    assert code == 0
    code, out, _ = run(capsys, "eval", tmp_path / "q", "--out", tmp_path / "r.json")
    assert code == 0 and "accuracy:  100.00%" in out
    assert json.loads((tmp_path / "r.json").read_text())["map"]["map5095"] == 1.0


def test_postproc_identity_configuration(pipes, tmp_path, capsys):
    code, _, _ = run(capsys, "postproc", pipes, "--out", tmp_path / "q", "--ruleset", "none", "--floor", 0,
                     "--stages", "")
    assert code == 0
    for src in sorted(pipes.glob("*.json")):
        before, after = load_document(src), load_document(tmp_path / "q" / src.name)
        assert after.detections == before.detections and after.spans == [] and after.audit == []


def test_outputs_are_deterministic_across_job_counts(tmp_path, capsys):
    for jobs in (1, 2):
        assert run(capsys, "synth", "--out", tmp_path / f"s{jobs}", "--n-pipes", 3, "--length-m", 20,
                   "--seed", 9, "--jobs", jobs)[0] == 0
        assert run(capsys, "postproc", tmp_path / f"s{jobs}", "--out", tmp_path / f"p{jobs}",
                   "--jobs", jobs)[0] == 0
    for name in ("s", "p"):
        a = sorted((tmp_path / f"{name}1").glob("*.json"))
        b = sorted((tmp_path / f"{name}2").glob("*.json"))
        assert [p.name for p in a] == [p.name for p in b]
        assert all(p.read_bytes() == q.read_bytes() for p, q in zip(a, b))


def test_documents_carry_provenance(pipes):
    doc = load_document(next(pipes.glob("*.json")))
    prov = doc.provenance
    assert prov["seed"] == 3 and prov["command"] == "synth" and len(prov["config_hash"]) == 16


def test_tile_manifest(pipes, tmp_path, capsys):
    code, out, _ = run(capsys, "tile", pipes, "--out", tmp_path / "m.jsonl", "--seed", 4)
    assert code == 0
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    header, records = json.loads(lines[0]), [json.loads(x) for x in lines[1:]]
    assert header["manifest"] == "sewerdet-tiles" and len(records) == 2 * 49
    assert f"wrote {len(records)} patch" in out
    lab = next(lab for r in records for lab in r["labels"])
    assert lab["box_network"] == [v * 8 / 15 for v in lab["box_patch"]]


def test_report_writes_overlays_and_summary(pipes, tmp_path, capsys):
    code, out, _ = run(capsys, "report", pipes, "--out", tmp_path / "rep")
    assert code == 0 and "Per-pipe running meters" in out
    names = sorted(p.name for p in (tmp_path / "rep").iterdir())
    assert names == ["pipe0000.ppm", "pipe0001.ppm", "summary.json", "summary.txt"]
    summary = json.loads((tmp_path / "rep" / "summary.json").read_text())
    assert len(summary["pipes"]) == 2


def test_config_file_env_and_flag_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "metrics": {"chunk_width": 300}, "postproc": {"merge_iou": 0.3}}))
    monkeypatch.setenv("SEWERDET_SEED", "2")
    monkeypatch.setenv("SEWERDET_MERGE_IOU", "0.4")
    resolved = resolve_config(cfg, {"seed": 3})
    assert (resolved.seed, resolved.chunk_width, resolved.merge_iou) == (3, 300, 0.4)


def test_config_validation():
    with pytest.raises(ConfigError):
        resolve_config(None, {"match_iou": 1.5}, environ={})
    with pytest.raises(ConfigError):
        resolve_config(None, {"stages": ["filter", "nope"]}, environ={})
    with pytest.raises(InfeasibleError):
        resolve_config(None, {"stride_px": 2000}, environ={})


@pytest.mark.parametrize("argv, category, code", [
    (["eval", "missing_dir", "--out", "x.json"], "missing_file", 6),
    (["eval", "x", "--out", "x.json", "--iou", "1.5"], "bad_config", 3),
    (["tile", "x", "--out", "m.jsonl", "--stride", "5000"], "infeasible_params", 5),
    (["synth", "--out", "o", "--profile", "grumpy"], "bad_config", 3),
])
def test_error_categories(tmp_path, monkeypatch, capsys, argv, category, code):
    monkeypatch.chdir(tmp_path)
    got, _, err = run(capsys, *argv)
    assert got == code and error_of(err) == category


def test_bad_schema_and_ruleset_errors(pipes, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": "9"}))
    code, _, err = run(capsys, "eval", bad, "--out", tmp_path / "r.json")
    assert code == 4 and error_of(err) == "bad_schema"
    rules = tmp_path / "rules.txt"
    rules.write_text("rule a: class_is(BAB) -> suppress\nrule b: teleport() -> suppress\n")
    code, _, err = run(capsys, "postproc", pipes, "--out", tmp_path / "q", "--ruleset", rules)
    assert code == 7 and error_of(err) == "bad_ruleset"
    assert ":2:" in json.loads(err)["message"]


def test_argparse_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
