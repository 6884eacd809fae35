"""Hand-built trees shared across test modules.

Each builder returns (tree, handles) where handles maps short labels to node
ids, so tests can say h["c3"] instead of chasing UUIDs.
"""

from podhive.model import NodeKind, Tree

DECK = NodeKind.DECK
POD = NodeKind.POD


def two_pods_tree():
    """One deck holding two pods whose functions call each other."""
    t = Tree.new()
    h = {}
    h["deck2"] = t.create_node(DECK, t.root.id, name="deck_two").id
    h["pa"] = t.create_node(POD, h["deck2"], code="fn a(n) = b(n) + 1;").id
    h["pb"] = t.create_node(POD, h["deck2"], code="fn b(n) = n * 2;").id
    h["elsewhere"] = t.create_node(DECK, t.root.id, name="elsewhere").id
    h["p_else"] = t.create_node(POD, h["elsewhere"], code="a(1)").id
    return t, h


def nested_tree():
    """Three-level deck chain with exports, a reexport, a utility deck and a
    test deck. Shape used by the visibility scenario suite.

    root
      deck A        pod a_only (public)
        deck B      pod b1 (public), reexports c1,c2
          deck C    pods c1,c2,c4 public; c3 private
          deck D    pod d1 (public)
          deck U    utility; pod defining utils_b1 (public)
          deck T    test; pod calling b1; pod calling a_only
    """
    t = Tree.new()
    h = {}
    h["A"] = t.create_node(DECK, t.root.id, name="A").id
    h["pa_only"] = t.create_node(POD, h["A"], code="fn a_only(n) = n;").id
    t.set_flags(h["pa_only"], public=True)
    h["B"] = t.create_node(DECK, h["A"], name="B").id
    h["pb1"] = t.create_node(POD, h["B"], code="fn b1(n) = n + 10;").id
    t.set_flags(h["pb1"], public=True)
    h["C"] = t.create_node(DECK, h["B"], name="C").id
    h["pc1"] = t.create_node(POD, h["C"], code="fn c1(n) = c3(n) + 1;").id
    h["pc2"] = t.create_node(POD, h["C"], code="fn c2(n) = n + 2;").id
    h["pc3"] = t.create_node(POD, h["C"], code="fn c3(n) = n + 3;").id
    h["pc4"] = t.create_node(POD, h["C"], code="fn c4(n) = n + 4;").id
    for label in ("pc1", "pc2", "pc4"):
        t.set_flags(h[label], public=True)
    h["D"] = t.create_node(DECK, h["B"], name="D").id
    h["pd1"] = t.create_node(POD, h["D"], code="fn d1(n) = n - 1;").id
    t.set_flags(h["pd1"], public=True)
    h["U"] = t.create_node(DECK, h["B"], name="U").id
    t.set_flags(h["U"], utility=True)
    h["pu1"] = t.create_node(POD, h["U"], code="fn utils_b1(n) = n * 100;").id
    t.set_flags(h["pu1"], public=True)
    h["T"] = t.create_node(DECK, h["B"], name="T").id
    t.set_flags(h["T"], test=True)
    h["pt1"] = t.create_node(POD, h["T"], code="b1(1)").id
    h["pt2"] = t.create_node(POD, h["T"], code="a_only(1)").id
    t.set_reexports(h["B"], ["c1", "c2"])
    return t, h


def compiler_tree():
    """Small two-pass compiler arranged the way a real project would be:
    parse and emit decks export their entry points, shared helpers live in a
    utility deck, and a test deck exercises the public surface.
    """
    t = Tree.new()
    h = {}
    h["top"] = t.create_node(DECK, t.root.id, name="compiler").id

    h["util"] = t.create_node(DECK, h["top"], name="shared").id
    t.set_flags(h["util"], utility=True)
    h["p_isnum"] = t.create_node(
        POD, h["util"], code="fn isnumber(c) = if c < 58 then if 47 < c then 1 else 0 else 0;"
    ).id
    h["p_isstr"] = t.create_node(
        POD, h["util"], code='fn isstring(c) = if isnumber(c) then 0 else 1;\n# ascii only'
    ).id
    t.set_flags(h["p_isnum"], public=True)
    t.set_flags(h["p_isstr"], public=True)

    h["parse"] = t.create_node(DECK, h["top"], name="parse").id
    h["p_tok"] = t.create_node(
        POD, h["parse"], code="fn tok_weight(c) = if isnumber(c) then 2 else 1;"
    ).id
    h["p_parse"] = t.create_node(
        POD, h["parse"], code="fn parse(c) = tok_weight(c) * 10;"
    ).id
    t.set_flags(h["p_parse"], public=True)

    h["emit"] = t.create_node(DECK, h["top"], name="emit").id
    h["p_emit"] = t.create_node(POD, h["emit"], code="fn emit(n) = n + 1000;").id
    t.set_flags(h["p_emit"], public=True)

    h["p_compile"] = t.create_node(
        POD, h["top"], code="fn compile(c) = emit(parse(c));"
    ).id
    t.set_flags(h["p_compile"], public=True)

    h["tests"] = t.create_node(DECK, h["top"], name="checks").id
    t.set_flags(h["tests"], test=True)
    h["p_check"] = t.create_node(POD, h["tests"], code="compile(65)").id
    return t, h
