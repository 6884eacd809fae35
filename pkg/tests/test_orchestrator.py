import pytest

from podhive.errors import InvalidTree, NotVisible
from podhive.model import Tree
from podhive.names import Origin, import_plan
from podhive.orchestrator import Orchestrator, PodState

from fixtures import DECK, POD, compiler_tree, nested_tree, two_pods_tree


@pytest.fixture
def orch_factory():
    made = []

    def make(tree, **kw):
        o = Orchestrator(tree, **kw)
        made.append(o)
        return o

    yield make
    for o in made:
        o.close()


def test_run_pod_results(orch_factory):
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    p1 = t.create_node(POD, d.id, code="1 + 2")
    p2 = t.create_node(POD, d.id, code="let x = 5;")
    o = orch_factory(t)
    st = o.run_pod(p1.id)
    assert st.state is PodState.OK
    assert st.last_result == {"mime": "text/plain", "data": "3"}
    st2 = o.run_pod(p2.id)
    assert st2.state is PodState.OK and st2.last_result is None
    assert st2.defined == ("x",)


def test_run_tree_trace_and_statuses(orch_factory):
    t, h = two_pods_tree()
    o = orch_factory(t)
    trace = o.run_tree()
    pods = [n.id for n in t.walk() if n.is_pod]
    assert [pid for pid, _ in trace] == sorted(pods, key=lambda p: trace_index(trace, p))
    assert len(trace) == len(pods)
    # the cross-deck call errors: `a` is not visible from the other deck
    st = o.status(h["p_else"])
    assert st.state is PodState.ERROR
    assert st.last_error["ename"] == "UndefinedName"
    # calling through the public surface works once both pods ran
    assert o.probe(h["pa"], "a(3)").value == "7"


def trace_index(trace, pid):
    return [i for i, (q, _s) in enumerate(trace) if q == pid][0]


def test_error_pod_does_not_stop_the_run(orch_factory):
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    bad = t.create_node(POD, d.id, code="zzz(")
    good = t.create_node(POD, d.id, code="let fine = 1;")
    o = orch_factory(t)
    o.run_tree()
    assert o.status(bad.id).state is PodState.ERROR
    assert o.status(bad.id).last_error["ename"] == "SyntaxError"
    assert o.status(good.id).state is PodState.OK


def test_ledger_matches_static_plan_after_full_run(orch_factory):
    for build in (nested_tree, compiler_tree):
        t, _ = build()
        o = orch_factory(t)
        o.run_tree()
        got = {e.key for e in o.ledger_entries()}
        want = {p.key for p in import_plan(t)}
        assert got == want, build.__name__


def test_jit_import_for_child_export(orch_factory):
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    c = t.create_node(DECK, a.id, name="c")
    src = t.create_node(POD, c.id, code="let shared = 4;")
    t.set_flags(src.id, public=True)
    user = t.create_node(POD, a.id, code="shared * 10")
    o = orch_factory(t)
    o.run_tree()
    assert o.status(user.id).last_result["data"] == "40"
    origins = {e.key: e.origin for e in o.ledger_entries()}
    key = (t.namespace_of(c.id), t.namespace_of(a.id), "shared")
    assert origins[key] is Origin.PUBLIC_CHILD


def test_redefinition_replays_through_import_chain(orch_factory):
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    c = t.create_node(DECK, a.id, name="c")
    src = t.create_node(POD, c.id, code="let base = 1;")
    t.set_flags(src.id, public=True)
    snap = t.create_node(POD, a.id, code="let captured = base + 1;")
    o = orch_factory(t)
    o.run_tree()
    assert o.probe(a.id, "captured").value == "2"

    t.set_code(src.id, "let base = 10;")
    o.mark_stale(src.id)
    o.reeval_pod(src.id)
    # the copied binding follows the redefinition immediately
    assert o.probe(a.id, "base").value == "10"
    # values other pods computed from the old binding do not recompute alone
    assert o.probe(a.id, "captured").value == "2"
    o.reeval_pod(snap.id)
    assert o.probe(a.id, "captured").value == "11"


def test_removing_a_definition_cascades(orch_factory):
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    c = t.create_node(DECK, a.id, name="c")
    src = t.create_node(POD, c.id, code="fn gone(n) = n;")
    t.set_flags(src.id, public=True)
    t.create_node(POD, a.id, code="fn caller(n) = gone(n);")
    o = orch_factory(t)
    o.run_tree()
    assert o.probe(a.id, "caller(1)").value == "1"
    t.set_code(src.id, "# nothing defined any more")
    o.mark_stale(src.id)
    o.reeval_pod(src.id)
    assert o.probe(a.id, "caller(1)").ename == "UndefinedName"
    assert o.probe(c.id, "gone(1)").ename == "UndefinedName"


def test_failed_reeval_leaves_fresh_run_state(orch_factory):
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    p = t.create_node(POD, d.id, code="fn f(n) = n;")
    o = orch_factory(t)
    o.run_tree()
    assert o.probe(d.id, "f(1)").value == "1"
    t.set_code(p.id, "fn f(n) = n; boom(")
    o.mark_stale(p.id)
    st = o.reeval_pod(p.id)
    assert st.state is PodState.ERROR
    # a fresh run of this snapshot would never have bound f
    assert o.probe(d.id, "f(1)").ename == "UndefinedName"


def test_test_node_fanin_and_rerun(orch_factory):
    t, h = nested_tree()
    o = orch_factory(t)
    o.run_tree()
    # during the full run the test deck evaluated before B's own pod, so its
    # call of b1 could not bind yet; rerunning the pod after the run works
    st = o.reeval_pod(h["pt1"])
    assert st.state is PodState.OK
    assert st.last_result["data"] == "11"
    # grandparent names stay invisible no matter how often it reruns
    st2 = o.reeval_pod(h["pt2"])
    assert st2.state is PodState.ERROR
    assert st2.last_error["ename"] == "UndefinedName"


def test_test_namespace_does_not_leak(orch_factory):
    t = Tree.new()
    d = t.create_node(DECK, t.root.id, name="d")
    tp = t.create_node(POD, d.id, code="let private_t = 9;")
    t.set_flags(tp.id, test=True)
    o = orch_factory(t)
    o.run_tree()
    assert o.probe(tp.id, "private_t").value == "9"
    assert o.probe(d.id, "private_t").ename == "UndefinedName"


def test_utility_fanout_covers_subtree_only(orch_factory):
    t, h = nested_tree()
    o = orch_factory(t)
    o.run_tree()
    assert o.probe(h["C"], "utils_b1(3)").value == "300"
    assert o.probe(h["B"], "utils_b1(3)").value == "300"
    assert o.probe(h["A"], "utils_b1(3)").ename == "UndefinedName"


def test_explicit_path_import(orch_factory):
    t, h = nested_tree()
    o = orch_factory(t)
    o.run_tree()
    assert o.probe(h["C"], "d1(5)").ename == "UndefinedName"
    entries = o.import_path(h["pc1"], "../D", ["d1"])
    assert entries[0].origin is Origin.EXPLICIT_PATH
    assert o.probe(h["C"], "d1(5)").value == "4"
    # absolute form addresses the same deck
    o.import_path(h["pc2"], "/A/B/D", ["d1"])
    with pytest.raises(NotVisible):
        o.import_path(h["pc1"], "../C", ["c1"])


def test_mark_stale_only_after_success(orch_factory):
    t = Tree.new()
    p = t.create_node(POD, t.root.id, code="1")
    o = orch_factory(t)
    o.run_tree()
    assert o.status(p.id).state is PodState.OK
    o.mark_stale(p.id)
    assert o.status(p.id).state is PodState.STALE
    o.mark_stale(p.id)
    assert o.status(p.id).state is PodState.STALE


def test_delete_subtree_retracts_bindings(orch_factory):
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    c = t.create_node(DECK, a.id, name="c")
    src = t.create_node(POD, c.id, code="let offer = 3;")
    t.set_flags(src.id, public=True)
    t.create_node(POD, a.id, code="offer")
    o = orch_factory(t)
    o.run_tree()
    assert o.probe(a.id, "offer").value == "3"
    removed = o.delete_subtree(c.id)
    assert src.id in removed
    assert o.probe(a.id, "offer").ename == "UndefinedName"
    assert src.id not in o.statuses()
    assert all(e.from_ns != "/ROOT/a/c" for e in o.ledger_entries())


def test_retarget_after_rename(orch_factory):
    t = Tree.new()
    a = t.create_node(DECK, t.root.id, name="a")
    p = t.create_node(POD, a.id, code="let v = 2;")
    o = orch_factory(t)
    o.run_tree()
    old_ns = {nid: t.namespace_of(nid) for nid in t.subtree_ids(a.id)}
    t.rename_deck(a.id, "z")
    o.retarget_namespaces(old_ns)
    assert o.status(p.id).state is PodState.UNEVALUATED
    assert o.probe(a.id, "v").ename == "UndefinedName"
    o.run_tree()
    assert o.probe(a.id, "v").value == "2"


def test_restart_kernel_clears_all_state(orch_factory):
    t, h = two_pods_tree()
    o = orch_factory(t)
    o.run_tree()
    o.restart_kernel()
    assert o.status(h["pa"]).state is PodState.UNEVALUATED
    assert o.ledger_entries() == []
    assert o.probe(h["deck2"], "b(1)").ename == "UndefinedName"


def test_event_stream_order(orch_factory):
    events = []
    t = Tree.new()
    p = t.create_node(POD, t.root.id, code="let s = print(5);\ns + 1")
    o = orch_factory(t, events=events.append)
    o.run_tree()
    kinds = [e["type"] for e in events if e.get("node") == p.id]
    running = kinds.index("pod_status")
    stream = kinds.index("stream")
    assert running < stream < len(kinds) - 1 - kinds[::-1].index("pod_status")
    terminal = [e for e in events if e["type"] == "pod_status"][-1]
    assert terminal["status"]["state"] == "Ok"
    assert ["stdout", "5\n"] in terminal["status"]["streams"]


def test_run_tree_on_subdeck_only(orch_factory):
    t, h = nested_tree()
    o = orch_factory(t)
    trace = o.run_tree(h["C"])
    ran = {pid for pid, _ in trace}
    assert ran == {h["pc1"], h["pc2"], h["pc3"], h["pc4"]}
    assert o.status(h["pb1"]).state is PodState.UNEVALUATED
