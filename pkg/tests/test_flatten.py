"""The flat oracle evaluates a whole tree in one namespace by mangling every
name with its namespace of origin. Its whole value is agreeing with the real
runtime, so most checks here are small hand-audited trees; the bulk
comparison against the orchestrator lives in the acceptance module.
"""

import pytest

from podhive.flatten import FLAT_NS, Outcome, linearize, oracle_eval_flat, oracle_run
from podhive.model import Tree

from fixtures import DECK, POD, compiler_tree, nested_tree, two_pods_tree


def test_linearize_orders_chunks_like_a_run():
    t, h = nested_tree()
    lin = linearize(t)
    order = [c.pod_id for c in lin.chunks]
    assert order.index(h["pc1"]) < order.index(h["pb1"]) < order.index(h["pa_only"])
    assert len(order) == len([n for n in t.walk() if n.is_pod])


def test_same_name_in_two_namespaces_does_not_collide():
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    b = t.create_node(DECK, t.root.id, name="b")
    t.create_node(POD, a.id, code="let k = 1;")
    t.create_node(POD, b.id, code="let k = 2;")
    pods, probes = oracle_run(t, [(a.id, "k"), (b.id, "k")])
    assert [p.value for p in probes] == ["1", "2"]
    assert all(o.ename is None for o in pods.values())


def test_visibility_is_enforced_flat():
    t, h = nested_tree()
    probes = [
        (h["B"], "c1(1)"),      # exported by child
        (h["B"], "c3(1)"),      # not public: must fail even though it exists
        (h["A"], "c4(1)"),      # not reexported past B
        (h["C"], "utils_b1(2)"),
        (h["A"], "utils_b1(2)"),
    ]
    got = oracle_eval_flat(t, probes)
    assert got[0] == Outcome(value="5")
    assert got[1].ename == "UndefinedName"
    assert got[2].ename == "UndefinedName"
    assert got[3] == Outcome(value="200")
    assert got[4].ename == "UndefinedName"


def test_exported_fn_keeps_private_callees():
    # c1 calls the non-public c3; callers of c1 from outside C still work
    t, h = nested_tree()
    got = oracle_eval_flat(t, [(h["B"], "c1(10)")])
    assert got[0] == Outcome(value="14")


def test_pod_outcomes_record_errors_without_stopping():
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    bad = t.create_node(POD, d.id, code="boom(")
    good = t.create_node(POD, d.id, code="let ok = 7;")
    pods, probes = oracle_run(t, [(d.id, "ok")])
    assert pods[bad.id].ename == "SyntaxError"
    assert pods[good.id].ename is None
    assert probes[0].value == "7"


def test_probe_must_be_bare_expression():
    t, h = two_pods_tree()
    got = oracle_eval_flat(t, [(h["deck2"], "let z = 1;")])
    assert got[0].ename == "SyntaxError"


def test_compiler_tree_end_to_end():
    t, h = compiler_tree()
    pods, probes = oracle_run(
        t,
        [
            (h["top"], "compile(65)"),
            (h["parse"], "isnumber(49)"),
            (h["tests"], "compile(49)"),
        ],
    )
    assert probes[0] == Outcome(value="1010")
    assert probes[1] == Outcome(value="1")
    assert probes[2] == Outcome(value="1020")


def test_program_text_is_reproducible():
    t, _ = nested_tree()
    lin1, lin2 = linearize(t), linearize(t)
    assert lin1.program_text == lin2.program_text
    assert lin1.program_text.endswith("\n")
