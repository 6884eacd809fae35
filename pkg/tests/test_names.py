import pytest

from podhive import names
from podhive.errors import NameCollision, NotVisible, ParseFailure, ReexportNotFound
from podhive.model import Tree
from podhive.names import (
    DEFAULT_EXTRACTOR,
    Origin,
    PatternExtractor,
    PodlangExtractor,
    Rule,
    execution_schedule,
    export_set,
    import_plan,
    resolve,
    visible_set,
)

from fixtures import DECK, POD, nested_tree, two_pods_tree


# -- extractors ---------------------------------------------------------------

def test_podlang_extractor_defined():
    ext = PodlangExtractor()
    assert ext.defined("fn inc(n) = n + 1;") == ["inc"]
    assert ext.defined("let x = 1;\nlet y = 2;\nx + y") == ["x", "y"]
    assert ext.defined("1 + 2") == []
    with pytest.raises(ParseFailure):
        ext.defined("let = ;")


def test_podlang_extractor_referenced():
    ext = PodlangExtractor()
    refs = ext.referenced("fn f(a) = g(a) + h;\nf(k)")
    # params and the program's own definitions are bound, not free
    assert refs == {"g", "h", "k"}
    # print is a builtin, not a free reference
    assert "print" not in ext.referenced("let x = print(1);\nx")


def test_pattern_extractor():
    ext = PatternExtractor()
    code = "def foo(x):\n    return bar(x)\n\nBAZ = 3\n"
    assert ext.defined(code) == ["foo", "BAZ"]
    assert "bar" in ext.referenced(code)


# -- export sets --------------------------------------------------------------

def test_export_set_public_pods_only():
    t, h = nested_tree()
    exported = export_set(t, t.node(h["C"]), DEFAULT_EXTRACTOR)
    assert sorted(exported.resolutions) == ["c1", "c2", "c4"]


def test_export_set_includes_reexports_with_original_source():
    t, h = nested_tree()
    exported = export_set(t, t.node(h["B"]), DEFAULT_EXTRACTOR)
    assert sorted(exported.resolutions) == ["b1", "c1", "c2"]
    assert exported.resolutions["c1"].source_ns == t.namespace_of(h["C"])


def test_export_set_empty_deck():
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    assert not export_set(t, d, DEFAULT_EXTRACTOR).resolutions


def test_reexport_must_exist():
    t, h = nested_tree()
    t.set_reexports(h["B"], ["ghost"])
    with pytest.raises(ReexportNotFound):
        export_set(t, t.node(h["B"]), DEFAULT_EXTRACTOR)


def test_utility_and_test_pods_do_not_export():
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    u = t.create_node(POD, d.id, code="fn u(n) = n;")
    t.set_flags(u.id, utility=True)
    t.set_flags(u.id, public=True)
    assert not export_set(t, d, DEFAULT_EXTRACTOR).resolutions


# -- visibility ---------------------------------------------------------------

def test_visible_set_rules():
    t, h = nested_tree()
    in_b = visible_set(t, h["B"])
    assert in_b.resolutions["b1"].rule is Rule.SAME_NAMESPACE
    assert in_b.resolutions["c1"].rule is Rule.PUBLIC_CHILD
    assert in_b.resolutions["utils_b1"].rule is Rule.UTILITY
    assert "c3" not in in_b.resolutions
    in_a = visible_set(t, h["A"])
    # reexported names climb exactly one more level
    assert "c1" in in_a.resolutions and "c2" in in_a.resolutions
    assert "c4" not in in_a.resolutions
    assert "utils_b1" not in in_a.resolutions


def test_visible_set_collision_reporting():
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    b = t.create_node(DECK, a.id, name="b")
    c = t.create_node(DECK, a.id, name="c")
    for d in (b, c):
        p = t.create_node(POD, d.id, code="fn clash(n) = n;")
        t.set_flags(p.id, public=True)
    with pytest.raises(NameCollision):
        visible_set(t, a.id)
    loose = visible_set(t, a.id, strict=False)
    assert "clash" in loose.collisions
    assert "clash" not in loose.resolutions


def test_same_namespace_beats_public_child():
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    t.create_node(POD, a.id, code="fn pick(n) = 1;")
    b = t.create_node(DECK, a.id, name="b")
    p = t.create_node(POD, b.id, code="fn pick(n) = 2;")
    t.set_flags(p.id, public=True)
    vis = visible_set(t, a.id, strict=False)
    assert vis.resolutions["pick"].rule is Rule.SAME_NAMESPACE
    assert vis.resolutions["pick"].source_ns == t.namespace_of(a.id)


def test_nearest_utility_wins():
    t = Tree.new()
    outer = t.create_node(DECK, t.root.id, name="outer")
    inner = t.create_node(DECK, outer.id, name="inner")
    for deck, val in ((t.root, 1), (outer, 2)):
        u = t.create_node(DECK, deck.id if hasattr(deck, "id") else deck, name=f"util{val}")
        t.set_flags(u.id, utility=True)
        p = t.create_node(POD, u.id, code=f"fn helper(n) = {val};")
        t.set_flags(p.id, public=True)
    vis = visible_set(t, inner.id, strict=False)
    # both utility decks blanket `inner`; the one rooted closer shadows
    assert vis.resolutions["helper"].source_ns.endswith("util2")


def test_resolve_rules_and_errors():
    t, h = nested_tree()
    assert resolve(t, "c1", h["pb1"]).rule is Rule.PUBLIC_CHILD
    assert resolve(t, "b1", h["pt1"]).rule is Rule.TEST_PARENT_ACCESS
    assert resolve(t, "utils_b1", h["pc1"]).rule is Rule.UTILITY
    with pytest.raises(NotVisible):
        resolve(t, "c3", h["pb1"])
    with pytest.raises(NotVisible):
        resolve(t, "a_only", h["pt1"])


def test_sibling_pods_resolve_each_other():
    t, h = two_pods_tree()
    assert resolve(t, "b", h["pa"]).rule is Rule.SAME_NAMESPACE
    with pytest.raises(NotVisible):
        resolve(t, "a", h["p_else"])


# -- schedule and plan ----------------------------------------------------------

def test_execution_schedule_order():
    t, h = nested_tree()
    steps = execution_schedule(t)
    evals = [nid for kind, nid in steps if kind == "eval"]
    # C, D, U, T pods come before B's own pod, which precedes A's pod order? no:
    # A's own pod runs last among A's subtree, after all of B's subtree
    assert evals.index(h["pc1"]) < evals.index(h["pb1"])
    assert evals.index(h["pb1"]) < evals.index(h["pa_only"])
    fan_kinds = [kind for kind, _ in steps]
    assert "fanin" in fan_kinds and "fanout" in fan_kinds
    # test deck fans in before its pods evaluate
    assert steps.index(("fanin", h["T"])) < steps.index(("eval", h["pt1"]))
    # utility deck fans out right after its pods evaluate
    assert steps.index(("fanout", h["U"])) > steps.index(("eval", h["pu1"]))


def test_import_plan_shapes():
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    assert import_plan(t) == []

    t2, h2 = nested_tree()
    plan = import_plan(t2)
    util_entries = [p for p in plan if p.origin is Origin.UTILITY and p.name == "utils_b1"]
    targets = {p.to_ns for p in util_entries}
    for label in ("B", "C", "D", "T"):
        assert t2.namespace_of(h2[label]) in targets
    assert t2.namespace_of(h2["U"]) not in targets
    assert t2.namespace_of(h2["A"]) not in targets
    test_entries = [p for p in plan if p.origin is Origin.TEST]
    assert {p.name for p in test_entries} >= {"b1", "c1", "utils_b1"}
    assert all(p.to_ns == t2.namespace_of(h2["T"]) for p in test_entries)


def test_import_plan_deterministic():
    t, _ = nested_tree()
    assert import_plan(t) == import_plan(t)
