import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment
from sklearn.base import clone

from sewerdet.core import CylindricalSpan, DefectClass, Material, MosaicGeometry, PixelBox, iou
from sewerdet.exceptions import ConfigError, RuleSyntaxError, UsageError
from sewerdet.postproc import (
    DetectionPostprocessor,
    PipeContext,
    ThresholdPolicy,
    apply_rules,
    expert_rules,
    filter_confidence,
    format_ruleset,
    merge_connected,
    nms,
    parse_ruleset,
    solve_assignment,
    stitch_seam,
)
from sewerdet.postproc.pipeline import identity_postprocessor
from sewerdet.postproc.rules import EXPERT_RULESET, load_ruleset

from conftest import FISSURE, ROOT, det

# --- thresholds ---------------------------------------------------------------


def test_floor_is_strict():
    dets = [det("a", 0, 0, 5, 5, conf=0.10), det("b", 0, 0, 5, 5, conf=0.1000001), det("c", 0, 0, 5, 5, conf=1.0)]
    assert [d.id for d in filter_confidence(dets)] == ["b", "c"]


def test_per_class_threshold():
    policy = ThresholdPolicy(per_class={"BAB": 0.4})
    dets = [det("f", 0, 0, 5, 5, FISSURE, 0.3), det("r", 0, 0, 5, 5, ROOT, 0.3)]
    assert [d.id for d in filter_confidence(dets, policy)] == ["r"]
    assert policy.threshold(ROOT) == 0.10
    assert ThresholdPolicy.from_dict(policy.to_dict()) == policy


# --- merge / nms ------------------------------------------------------------------


def test_merge_examples():
    two = [det("a", 0, 0, 10, 10), det("b", 50, 0, 10, 10)]
    assert merge_connected(two) == two
    chain = [det("a", 0, 0, 10, 10), det("b", 0, 0, 20, 10), det("c", 10, 0, 10, 10)]
    assert iou(chain[0].box, chain[2].box) == 0
    (m,) = merge_connected(chain, 0.3)
    assert m.box == PixelBox(0, 0, 20, 10) and m.merged_from == ("a", "b", "c")
    barrier = [det("f", 0, 0, 10, 10, FISSURE), det("r", 0, 0, 10, 10, ROOT)]
    assert len(merge_connected(barrier)) == 2


def _random_dets(rng, n, span=400, classes=(FISSURE, ROOT)):
    out = []
    for i in range(n):
        x, y = rng.integers(0, span, size=2)
        w, h = rng.integers(5, 80, size=2)
        out.append(det(f"d{i}", int(x), int(y), int(w), int(h), classes[i % len(classes)],
                       float(rng.uniform(0.05, 1.0))))
    return out


def _components_oracle(dets, threshold):
    """Union-find-free oracle: BFS over the link graph."""
    seen, comps = set(), []
    for i in range(len(dets)):
        if i in seen:
            continue
        stack, comp = [i], set()
        while stack:
            k = stack.pop()
            if k in comp:
                continue
            comp.add(k)
            stack += [j for j in range(len(dets)) if j not in comp and dets[j].cls is dets[k].cls
                      and iou(dets[j].box, dets[k].box) >= threshold]
        seen |= comp
        comps.append(frozenset(dets[k].id for k in comp))
    return set(comps)


def test_merge_single_pass_matches_bfs_components():
    from sewerdet.postproc.merging import _merge_once

    rng = np.random.default_rng(0)
    for _ in range(200):
        dets = _random_dets(rng, 25)
        merged, _ = _merge_once(dets, 0.2)
        got = {frozenset(d.merged_from or (d.id,)) for d in merged}
        assert got == _components_oracle(dets, 0.2)


def test_merge_and_nms_idempotent_on_1000_sets():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        dets = _random_dets(rng, 12)
        once = merge_connected(dets)
        assert merge_connected(once) == once
        kept = nms(dets)
        assert nms(kept) == kept
        f = filter_confidence(dets)
        assert filter_confidence(f) == f


def test_nms_examples():
    assert nms([det("a", 0, 0, 5, 5)]) == [det("a", 0, 0, 5, 5)]
    out = nms([det("lo", 0, 0, 10, 10, conf=0.8), det("hi", 0, 0, 10, 10, conf=0.9)])
    assert [d.id for d in out] == ["hi"]
    both = nms([det("f", 0, 0, 10, 10, FISSURE), det("r", 0, 0, 10, 10, ROOT)])
    assert len(both) == 2


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100), st.integers(1, 40), st.integers(1, 40),
                          st.floats(0.01, 1.0)), max_size=15))
def test_nms_survivors_do_not_overlap(raw):
    dets = [det(f"d{i}", x, y, w, h, conf=c) for i, (x, y, w, h, c) in enumerate(raw)]
    kept = nms(dets, 0.5)
    for a, b in itertools.combinations(kept, 2):
        assert iou(a.box, b.box) <= 0.5


# --- assignment -----------------------------------------------------------------


def _brute_force(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_assignment_examples():
    m = solve_assignment([[0, 1], [1, 0]])
    assert set(m.pairs) == {(0, 0), (1, 1)} and m.total_cost == 0
    m = solve_assignment([[4, 1], [2, 8]])
    assert set(m.pairs) == {(0, 1), (1, 0)} and m.total_cost == 3
    assert solve_assignment([[7]]).pairs == ((0, 0),)


def test_assignment_matches_permutation_search():
    rng = np.random.default_rng(2)
    for k in range(1000):
        n = 1 + k % 6
        cost = rng.integers(0, 20, size=(n, n)).astype(float) if k % 2 else rng.random((n, n))
        m = solve_assignment(cost)
        assert m.complete and len(m) == n
        assert m.total_cost == _brute_force(cost)


def test_assignment_rectangular_and_forbidden_against_scipy():
    rng = np.random.default_rng(3)
    for _ in range(300):
        r, c = rng.integers(1, 8, size=2)
        cost = rng.random((r, c))
        forbid = {(i, j) for i in range(r) for j in range(c) if rng.random() < 0.3}
        m = solve_assignment(cost, forbid)
        assert all(p not in forbid for p in m.pairs)
        masked = np.where([[(i, j) in forbid for j in range(c)] for i in range(r)], 1e6, cost)
        rows, cols = linear_sum_assignment(masked)
        allowed = [(i, j) for i, j in zip(rows, cols) if (i, j) not in forbid]
        assert len(m) == len(allowed)
        assert m.total_cost == pytest.approx(sum(cost[i, j] for i, j in allowed), abs=1e-9)


def test_assignment_fully_forbidden_row_left_unmatched():
    m = solve_assignment([[1, 2], [3, 4]], forbid={(0, 0), (0, 1)})
    assert m.pairs == ((1, 0),) and not m.complete


def test_assignment_ties_are_deterministic():
    m1 = solve_assignment(np.ones((5, 5)))
    assert m1.pairs == solve_assignment(np.ones((5, 5))).pairs == tuple((i, i) for i in range(5))


# --- seam -------------------------------------------------------------------------

G = MosaicGeometry("p", 5000, 1000.0)


def test_seam_examples():
    plain = [det("a", 0, 100, 10, 10)]
    assert stitch_seam(plain, G) == (plain, [])
    top, bottom = det("t", 100, 0, 100, 30), det("b", 110, 1170, 100, 30)
    rest, (span,) = stitch_seam([top, bottom], G)
    assert rest == [] and span.source_ids == ("t", "b")
    wrong = [det("t", 100, 0, 100, 30, FISSURE), det("b", 100, 1170, 100, 30, ROOT)]
    assert stitch_seam(wrong, G)[1] == []


def test_seam_prefers_best_overlap():
    dets = [det("t1", 100, 0, 100, 30), det("t2", 190, 0, 100, 30),
            det("b1", 185, 1150, 100, 50), det("b2", 95, 1150, 100, 50)]
    _, spans = stitch_seam(dets, G)
    assert sorted(s.source_ids for s in spans) == [("t1", "b2"), ("t2", "b1")]


def test_seam_ignores_full_height_and_low_overlap():
    dets = [det("full", 100, 0, 20, 1200), det("b", 100, 1100, 20, 100),
            det("t", 1000, 0, 100, 30), det("b2", 1095, 1180, 100, 20)]
    rest, spans = stitch_seam(dets, G, min_axial_overlap=0.1)
    assert spans == [] and len(rest) == 4


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 4900), st.sampled_from([0, 1, 2]), st.integers(1, 100),
                          st.integers(1, 300), st.sampled_from([FISSURE, ROOT])), max_size=20))
def test_seam_conservation_and_edge_contract(raw):
    dets = []
    for i, (x, where, w, h, cls) in enumerate(raw):
        y = {0: 0, 1: 1200 - h, 2: 400}[where]
        dets.append(det(f"d{i}", x, y, w, h, cls))
    rest, spans = stitch_seam(dets, G)
    assert len(dets) == len(rest) + 2 * len(spans)
    for s in spans:
        assert s.top_part.y == 0 and s.bottom_part.y2 == 1200
    ids = [d.id for d in rest] + [i for s in spans for i in s.source_ids]
    assert sorted(ids) == sorted(d.id for d in dets)


# --- rules ------------------------------------------------------------------------


def test_empty_rules_identity(geometry):
    dets = [det("a", 10, 10, 5, 5)]
    assert apply_rules(dets, PipeContext(geometry), []) == (dets, [])


def test_root_far_from_joint_is_down_weighted():
    g = MosaicGeometry("p", 20_000, 1000.0)
    ctx = PipeContext(g, (PixelBox(1000, 500, 100, 100),))
    root = det("r", 6100, 200, 100, 100, ROOT, 0.8)  # 5 m from the connection
    (out,), events = apply_rules([root], ctx, expert_rules())
    assert out.confidence == pytest.approx(0.4)
    assert [e.rule for e in events] == ["roots_away_from_joints"]
    near = det("n", 1500, 200, 100, 100, ROOT, 0.8)
    assert apply_rules([near], ctx, expert_rules())[0][0].confidence == 0.8


def test_circumferential_fissure_suppressed(geometry):
    rules = parse_ruleset(
        "rule circ: class_is(BAB) and within_distance_of_joint(0.3) "
        "and vertical_extent_fraction_at_least(0.5) and aspect_ratio_h_over_w_at_least(2) -> suppress"
    )
    fissure = det("f", 2600, 60, 100, 1080)  # 0.1 m from the joint at 2500 px
    out, events = apply_rules([fissure, det("g", 4000, 0, 100, 1080)], PipeContext(geometry), rules)
    assert [d.id for d in out] == ["g"]
    assert events[0].action == "suppress" and events[0].detection_id == "f"


def test_clay_rules_tag_and_scale():
    g = MosaicGeometry("p", 10_000, 1000.0, material=Material.VITRIFIED_CLAY, joint_positions_px=(5000,))
    dets = [det("f", 5100, 10, 50, 50, FISSURE, 0.9), det("s", 100, 10, 50, 50, DefectClass.SURFACE_DAMAGE, 0.5)]
    (f, s), _ = apply_rules(dets, PipeContext(g), expert_rules())
    assert f.notes and "glaze" in f.notes[0]
    assert s.confidence == pytest.approx(0.4)


def test_ref_rules_skipped_without_joints_or_connections():
    g = MosaicGeometry("p", 10_000, 1000.0)
    root = det("r", 6100, 200, 100, 100, ROOT, 0.8)
    (out,), events = apply_rules([root], PipeContext(g), expert_rules())
    assert out.confidence == 0.8
    skipped = {e.rule for e in events if e.action == "skipped"}
    assert "roots_away_from_joints" in skipped and "circumferential_fissure_at_joint" in skipped


@given(st.lists(st.tuples(st.integers(0, 11_000), st.integers(0, 1000), st.floats(0.01, 1.0),
                          st.sampled_from(list(DefectClass))), max_size=25))
def test_scale_rules_keep_ids_and_suppress_rules_shrink(raw):
    g = MosaicGeometry("p", 12_000, 1000.0, joint_positions_px=(3000, 6000))
    dets = [det(f"d{i}", x, y, 100, 150, cls, c) for i, (x, y, c, cls) in enumerate(raw)]
    ctx = PipeContext(g)
    scaled, _ = apply_rules(dets, ctx, expert_rules())
    assert [d.id for d in scaled] == [d.id for d in dets]
    suppress = parse_ruleset("rule s: class_is(BBA, BAB) and within_distance_of_joint(0.5) -> suppress")
    kept, _ = apply_rules(dets, ctx, suppress)
    assert {d.id for d in kept} <= {d.id for d in dets}


def test_rule_order_matters(geometry):
    a = parse_ruleset("rule s: class_is(BBA) -> scale_confidence(0.5)\nrule k: class_is(BBA) -> suppress")
    out, events = apply_rules([det("r", 10, 10, 5, 5, ROOT)], PipeContext(geometry), a)
    assert out == [] and [e.action for e in events] == ["scale_confidence", "suppress"]
    out, events = apply_rules([det("r", 10, 10, 5, 5, ROOT)], PipeContext(geometry), a[::-1])
    assert [e.action for e in events] == ["suppress"]


def test_parser_roundtrip_and_diagnostics(tmp_path):
    rules = parse_ruleset(EXPERT_RULESET)
    assert parse_ruleset(format_ruleset(rules)) == rules
    bad = "# header\n\nrule ok: class_is(BAB) -> suppress\nrule bad: is_big(3) -> suppress\n"
    with pytest.raises(RuleSyntaxError) as exc:
        parse_ruleset(bad, source="r.txt")
    assert exc.value.line == 4 and "r.txt:4:" in str(exc.value) and "is_big" in str(exc.value)
    with pytest.raises(RuleSyntaxError, match="unknown action"):
        parse_ruleset("rule x: class_is(BAB) -> explode")
    with pytest.raises(RuleSyntaxError, match="duplicate"):
        parse_ruleset("rule x: class_is(BAB) -> suppress\nrule x: class_is(BBA) -> suppress")
    with pytest.raises(RuleSyntaxError):
        parse_ruleset("rule x: class_is(NOPE) -> suppress")
    p = tmp_path / "rules.txt"
    p.write_text(format_ruleset(rules))
    assert load_ruleset(p) == rules


def test_tag_argument_may_contain_commas_and_parens():
    (r,) = parse_ruleset('rule t: class_is(BAB) -> tag("odd, (really) odd")')
    assert r.action.note == "odd, (really) odd"


# --- pipeline --------------------------------------------------------------------


def test_identity_configuration():
    dets = [det("a", 0, 0, 10, 10, conf=0.05), det("b", 0, 0, 10, 10, conf=0.06), det("c", 0, 0, 10, 1200)]
    res = identity_postprocessor().process(dets, G)
    assert res.detections == dets and res.spans == [] and res.audit == []


def test_pipeline_floor_holds_after_down_weighting():
    g = MosaicGeometry("p", 20_000, 1000.0, joint_positions_px=(1000,))
    root = det("r", 9000, 100, 50, 50, ROOT, 0.18)  # rule halves it to 0.09
    res = DetectionPostprocessor().process([root], g)
    assert res.detections == [] and res.audit[0].rule == "roots_away_from_joints"


def test_pipeline_is_deterministic_and_clonable():
    rng = np.random.default_rng(7)
    dets = _random_dets(rng, 40, span=1100)
    pp = DetectionPostprocessor(per_class_thresholds={"BBA": 0.3})
    a = pp.process(dets, G)
    b = clone(pp).process(list(dets), G)
    assert a == b
    assert pp.transform([(dets, G)])[0] == a


def test_pipeline_validates_parameters():
    with pytest.raises(ConfigError):
        DetectionPostprocessor(stage_order=("filter", "bogus")).fit()
    with pytest.raises(UsageError):
        DetectionPostprocessor(merge_iou=0).fit()


def test_stage_order_is_configurable():
    top, bottom = det("t", 100, 0, 100, 30), det("b", 110, 1170, 100, 30)
    dup = det("t2", 100, 0, 100, 30)
    merged_first = DetectionPostprocessor(rules=None).process([top, dup, bottom], G)
    assert len(merged_first.spans) == 1 and merged_first.detections == []
    stitched_first = DetectionPostprocessor(rules=None, stage_order=("filter", "stitch", "merge")).process(
        [top, dup, bottom], G)
    assert len(stitched_first.spans) == 1 and len(stitched_first.detections) == 1
    assert isinstance(merged_first.spans[0], CylindricalSpan)
