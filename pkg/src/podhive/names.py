"""Static realization of the five visibility rules.

Everything here is a pure function over a tree snapshot plus a pluggable
name extractor. Nothing touches a kernel.

Rule summary, in shadowing precedence order:
  1. SameNamespace   names defined by the namespace's own regular pods
  2. PublicChild     a child deck's export set (public pods + reexports),
                     visible exactly one level up; reexports carry a name
                     further up one deck at a time
  3. Utility         a utility deck/pod exports into every deck namespace in
                     the subtree of its parent deck; the nearest utility wins
  4. TestParentAccess a test node additionally reads everything visible in
                     its parent deck; its own names never leave it
  5. ExplicitPath    path-addressed access; produced by the orchestrator's
                     import_path operation, never by `resolve`

Which rules feed which kind of namespace:
  regular/utility deck   1 + 2 + 3
  test deck              1 + 2 + 3 + 4
  test pod               own definitions + 4
  utility pod            own definitions only

Cross-rule collisions resolve by the order above and are recorded as
warnings. Two sources at the same precedence poison the name: it drops out
of the resolution map (so it fails as undefined wherever used) and is
reported; `visible_set` raises NameCollision unless asked to be lenient.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

from .errors import NameCollision, NotVisible, ParseFailure, ReexportNotFound
from .model import Node, Tree
from .podlang import PodlangSyntaxError
from .podlang import defined_names as podlang_defined
from .podlang import free_names as podlang_free


class Rule(str, Enum):
    SAME_NAMESPACE = "SameNamespace"
    PUBLIC_CHILD = "PublicChild"
    UTILITY = "Utility"
    TEST_PARENT_ACCESS = "TestParentAccess"
    EXPLICIT_PATH = "ExplicitPath"


_RANK = {
    Rule.SAME_NAMESPACE: 0,
    Rule.PUBLIC_CHILD: 1,
    Rule.UTILITY: 2,
    Rule.TEST_PARENT_ACCESS: 3,
}


@dataclass(frozen=True)
class Resolution:
    name: str
    source_ns: str
    rule: Rule
    distance: int = 0  # utility only: hops from context to the utility's parent


@dataclass
class NameSet:
    """name -> defining namespace, with how each name got here."""

    entries: dict[str, str] = field(default_factory=dict)
    resolutions: dict[str, Resolution] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    collisions: dict[str, list[str]] = field(default_factory=dict)

    def put(self, res: Resolution):
        self.entries[res.name] = res.source_ns
        self.resolutions[res.name] = res

    def drop(self, name: str):
        self.entries.pop(name, None)
        self.resolutions.pop(name, None)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)


# -- extractors ------------------------------------------------------------


class NameExtractor(Protocol):
    def defined(self, code: str) -> list[str]: ...

    def referenced(self, code: str) -> set[str]: ...


class PodlangExtractor:
    """Exact extraction via the real parser."""

    def defined(self, code: str) -> list[str]:
        try:
            return podlang_defined(code)
        except PodlangSyntaxError as exc:
            raise ParseFailure(exc.message) from None

    def referenced(self, code: str) -> set[str]:
        try:
            return podlang_free(code)
        except PodlangSyntaxError as exc:
            raise ParseFailure(exc.message) from None


_DEF_RE = re.compile(r"^(?:def|class)\s+([A-Za-z_]\w*)|^([A-Za-z_]\w*)\s*=[^=]", re.MULTILINE)
_WORD_RE = re.compile(r"[A-Za-z_]\w*")


class PatternExtractor:
    """Top-level-definition pattern matcher for dynamic host languages.

    Coarse on purpose; over-reporting references only costs extra imports.
    """

    def defined(self, code: str) -> list[str]:
        out: list[str] = []
        for m in _DEF_RE.finditer(code):
            name = m.group(1) or m.group(2)
            if name and name not in out:
                out.append(name)
        return out

    def referenced(self, code: str) -> set[str]:
        return set(_WORD_RE.findall(code)) - set(self.defined(code))


DEFAULT_EXTRACTOR = PodlangExtractor()


def extractor_for(kernel_language: str) -> NameExtractor:
    """Extractor matching a repo's stored kernel_language.

    Unknown languages get the pattern matcher: dynamic hosts run through a
    subprocess kernel, so extraction only has to be good enough to wire
    imports.
    """
    if kernel_language == "callgraph":
        # function-level import; importer builds on this module
        from .importer import EXTRACTOR

        return EXTRACTOR
    if kernel_language == "podlang":
        return DEFAULT_EXTRACTOR
    return PatternExtractor()


# -- name queries ------------------------------------------------------------


def pod_defined_names(tree: Tree, pod: Node, ext: NameExtractor) -> list[str]:
    return ext.defined(pod.code)


def deck_own_names(tree: Tree, deck: Node, ext: NameExtractor) -> dict[str, str]:
    """Names the deck's regular pods define, mapped to the deck namespace.
    Unparseable pods contribute nothing here; they fail at run time."""
    ns = tree.namespace_of(deck.id)
    out: dict[str, str] = {}
    for pod in tree.child_pods(deck.id):
        if pod.flags.test or pod.flags.utility:
            continue
        try:
            for name in ext.defined(pod.code):
                out[name] = ns
        except ParseFailure:
            continue
    return out


def export_set(tree: Tree, deck: Node, ext: NameExtractor) -> NameSet:
    """What a deck offers one level up: names of its public regular pods,
    plus reexported names pulled from child deck export sets. Reexports keep
    pointing at the original defining namespace."""
    ns = tree.namespace_of(deck.id)
    out = NameSet()
    for pod in tree.child_pods(deck.id):
        if pod.flags.test or pod.flags.utility or not pod.flags.public:
            continue
        try:
            names = ext.defined(pod.code)
        except ParseFailure:
            continue
        for name in names:
            out.put(Resolution(name, ns, Rule.PUBLIC_CHILD))
    child_exports: dict[str, NameSet] = {}
    for name in deck.reexports:
        found: Optional[Resolution] = None
        for child in tree.child_decks(deck.id):
            if child.flags.test or child.flags.utility:
                continue
            if child.id not in child_exports:
                child_exports[child.id] = export_set(tree, child, ext)
            candidate = child_exports[child.id].resolutions.get(name)
            if candidate is not None:
                if found is not None:
                    raise NameCollision(
                        f"reexport {name!r} offered by both {found.source_ns} and {candidate.source_ns}",
                        name=name,
                        sources=[found.source_ns, candidate.source_ns],
                    )
                found = candidate
        if found is None:
            raise ReexportNotFound(
                f"{name!r} is not exported by any child deck of {tree.path_of(deck.id)}",
                name=name,
            )
        if found.name in out.entries and out.entries[found.name] != found.source_ns:
            raise NameCollision(
                f"{name!r} exported by a public pod and reexported from {found.source_ns}",
                name=name,
                sources=[out.entries[found.name], found.source_ns],
            )
        out.put(Resolution(found.name, found.source_ns, Rule.PUBLIC_CHILD))
    return out


def utility_exports(tree: Tree, node: Node, ext: NameExtractor) -> NameSet:
    """What a utility node pushes into its parent's subtree. Source stays
    the original defining namespace (a reexport inside a utility deck points
    below the deck; the deck's own namespace never holds that binding)."""
    out = NameSet()
    if node.is_deck:
        exported = export_set(tree, node, ext)
        for res in exported.resolutions.values():
            out.put(Resolution(res.name, res.source_ns, Rule.UTILITY))
    else:
        ns = tree.namespace_of(node.id)
        try:
            names = ext.defined(node.code)
        except ParseFailure:
            names = []
        for name in names:
            out.put(Resolution(name, ns, Rule.UTILITY))
    return out


def utility_nodes_in_scope(tree: Tree, node: Node) -> list[tuple[Node, int]]:
    """Utility decks/pods whose parent deck's subtree contains `node`,
    with hop distance to that parent (for nearest-wins shadowing)."""
    out: list[tuple[Node, int]] = []
    for cand in tree.nodes.values():
        if not cand.flags.utility or cand.id == node.id or cand.parent is None:
            continue
        parent_id = cand.parent
        if node.id == parent_id or tree.is_ancestor(parent_id, node.id):
            out.append((cand, tree.depth(node.id) - tree.depth(parent_id)))
    out.sort(key=lambda pair: (pair[1], tree.namespace_of(pair[0].id)))
    return out


def visible_set(
    tree: Tree,
    node_id: str,
    ext: NameExtractor = DEFAULT_EXTRACTOR,
    *,
    strict: bool = True,
) -> NameSet:
    """Everything resolvable inside the namespace owned by `node_id`.

    The node must own a namespace: a deck, or a test/utility pod. Regular
    pods share their deck's namespace; call this with the deck instead
    (`resolve` does that hop for you).

    strict=True raises on same-rank two-source names; strict=False drops
    them from the resolution map and lists them under `.collisions` (a
    poisoned name resolves nowhere, so code using it fails as undefined).
    """
    node = tree.node(node_id)
    out = NameSet()
    poisoned: set[str] = set()

    def offer(res: Resolution):
        if res.name in poisoned:
            return
        held = out.resolutions.get(res.name)
        if held is None:
            out.put(res)
            return
        if held.source_ns == res.source_ns:
            # same original binding reached along two routes; keep stronger tag
            if _RANK[res.rule] < _RANK[held.rule]:
                out.put(res)
            return
        held_rank, new_rank = _RANK[held.rule], _RANK[res.rule]
        if new_rank < held_rank:
            out.warnings.append(
                f"{res.name!r}: {res.rule.value} from {res.source_ns} shadows "
                f"{held.rule.value} from {held.source_ns}"
            )
            out.put(res)
        elif new_rank > held_rank:
            out.warnings.append(
                f"{res.name!r}: {held.rule.value} from {held.source_ns} shadows "
                f"{res.rule.value} from {res.source_ns}"
            )
        else:
            if held.rule is Rule.UTILITY and held.distance != res.distance:
                near, far = (held, res) if held.distance < res.distance else (res, held)
                out.warnings.append(
                    f"{near.name!r}: utility {near.source_ns} (nearer) shadows {far.source_ns}"
                )
                out.put(near)
                return
            poisoned.add(res.name)
            out.collisions[res.name] = [held.source_ns, res.source_ns]
            out.warnings.append(
                f"{res.name!r} arrives from both {held.source_ns} and {res.source_ns}"
            )
            out.drop(res.name)

    # rule 1: the namespace's own definitions
    if node.is_deck:
        for name, ns in deck_own_names(tree, node, ext).items():
            offer(Resolution(name, ns, Rule.SAME_NAMESPACE))
    else:
        ns = tree.namespace_of(node.id)
        try:
            for name in ext.defined(node.code):
                offer(Resolution(name, ns, Rule.SAME_NAMESPACE))
        except ParseFailure:
            pass

    # rule 2: child regular decks export one level up
    if node.is_deck:
        for child in tree.child_decks(node.id):
            if child.flags.test or child.flags.utility:
                continue
            for res in export_set(tree, child, ext).resolutions.values():
                offer(Resolution(res.name, res.source_ns, Rule.PUBLIC_CHILD))

    # rule 3: utility nodes blanket the deck namespaces of their parent's
    # subtree; pod-private namespaces are not imported into (a test pod gets
    # these through rule 4 instead, a utility pod stays self-contained)
    if node.is_deck:
        for util, distance in utility_nodes_in_scope(tree, node):
            for res in utility_exports(tree, util, ext).resolutions.values():
                offer(Resolution(res.name, res.source_ns, Rule.UTILITY, distance))

    # rule 4: test nodes read their parent deck's whole visible set
    if node.flags.test and node.parent is not None:
        parent_visible = visible_set(tree, node.parent, ext, strict=False)
        out.warnings.extend(parent_visible.warnings)
        for res in parent_visible.resolutions.values():
            offer(Resolution(res.name, res.source_ns, Rule.TEST_PARENT_ACCESS))

    if strict and out.collisions:
        name, sources = next(iter(out.collisions.items()))
        raise NameCollision(
            f"{name!r} arrives from both {sources[0]} and {sources[1]}",
            name=name,
            sources=sources,
        )
    return out


def resolve(
    tree: Tree,
    name: str,
    from_node: str,
    ext: NameExtractor = DEFAULT_EXTRACTOR,
) -> Resolution:
    """Where `name` comes from when referenced inside `from_node`'s namespace."""
    owner = tree.owner_of_namespace(from_node)
    vis = visible_set(tree, owner.id, ext, strict=False)
    if name in vis.collisions:
        sources = vis.collisions[name]
        raise NameCollision(
            f"{name!r} arrives from both {sources[0]} and {sources[1]}",
            name=name,
            sources=sources,
        )
    found = vis.resolutions.get(name)
    if found is None:
        raise NotVisible(
            f"{name!r} is not visible in {tree.namespace_of(owner.id)}",
            name=name,
            ns=tree.namespace_of(owner.id),
        )
    return found


# -- execution schedule ------------------------------------------------------

# Step kinds: ("fanin", test_node_id), ("eval", pod_id), ("fanout", utility_node_id)
Step = tuple[str, str]


def execution_schedule(tree: Tree, start: Optional[str] = None) -> list[Step]:
    """The exact order a full run walks the tree: child decks first in
    sibling order, then own pods in index order. Utility nodes fan out
    right after they evaluate; test nodes fan in right before."""
    steps: list[Step] = []

    def deck_steps(deck: Node):
        if deck.flags.test:
            steps.append(("fanin", deck.id))
        for child in tree.child_decks(deck.id):
            deck_steps(child)
        for pod in tree.child_pods(deck.id):
            if pod.flags.test:
                steps.append(("fanin", pod.id))
                steps.append(("eval", pod.id))
            elif pod.flags.utility:
                steps.append(("eval", pod.id))
                steps.append(("fanout", pod.id))
            else:
                steps.append(("eval", pod.id))
        if deck.flags.utility:
            steps.append(("fanout", deck.id))

    node = tree.node(start or tree.root_id)
    if node.is_pod:
        if node.flags.test:
            return [("fanin", node.id), ("eval", node.id)]
        if node.flags.utility:
            return [("eval", node.id), ("fanout", node.id)]
        return [("eval", node.id)]
    deck_steps(node)
    return steps


def fanout_targets(tree: Tree, util: Node) -> list[str]:
    """Deck namespaces a utility node exports into: every deck in the
    subtree of its parent deck, except the utility itself. Pod-private
    namespaces (test/utility pods) are never targets."""
    own_ns = tree.namespace_of(util.id)
    targets: list[str] = []
    for n in tree.walk(util.parent):
        if not n.is_deck:
            continue
        ns = tree.namespace_of(n.id)
        if ns != own_ns:
            targets.append(ns)
    return targets


# -- import plan --------------------------------------------------------------


class Origin(str, Enum):
    PUBLIC_CHILD = "PublicChild"
    UTILITY = "Utility"
    TEST = "Test"
    EXPLICIT_PATH = "ExplicitPath"


@dataclass(frozen=True)
class PlanImport:
    from_ns: str
    to_ns: str
    name: str
    origin: Origin

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.from_ns, self.to_ns, self.name)


def fanin_entries(tree: Tree, test_node: Node, ext: NameExtractor = DEFAULT_EXTRACTOR) -> list[PlanImport]:
    """The imports a test node issues when it starts: every name visible in
    its parent deck, copied out of the parent namespace. A name the parent
    only sees through a child deck's export is materialized into the parent
    namespace first; nothing else ever puts it there, and the copy chain has
    to start where the binding actually lives."""
    parent_ns = tree.namespace_of(test_node.parent)
    own_ns = tree.namespace_of(test_node.id)
    vis = visible_set(tree, test_node.parent, ext, strict=False)
    out: list[PlanImport] = []
    for name in sorted(vis.resolutions):
        res = vis.resolutions[name]
        if res.rule is Rule.PUBLIC_CHILD:
            out.append(PlanImport(res.source_ns, parent_ns, name, Origin.PUBLIC_CHILD))
        out.append(PlanImport(parent_ns, own_ns, name, Origin.TEST))
    return out


def import_plan(
    tree: Tree,
    ext: NameExtractor = DEFAULT_EXTRACTOR,
    start: Optional[str] = None,
) -> list[PlanImport]:
    """Canonical ordered list of the AddImport calls a full run issues.

    Pure function of the snapshot, deduplicated on (from, to, name), ordered
    by the execution schedule (which visits child decks before a deck's own
    pods). The runtime's live ledger after a quiescent full run must equal
    this as a set; re-issues caused by pending materialization or replay
    touch the same entries and so do not change the set.

    Regular pods contribute the child-deck exports their code actually
    references: those imports are issued at the pod's own run slot, which is
    the only moment the runtime learns the pod needs them.
    """
    plan: list[PlanImport] = []
    seen: set[tuple[str, str, str]] = set()
    vis_cache: dict[str, NameSet] = {}

    def visible(deck_id: str) -> NameSet:
        if deck_id not in vis_cache:
            vis_cache[deck_id] = visible_set(tree, deck_id, ext, strict=False)
        return vis_cache[deck_id]

    def add(imp: PlanImport):
        if imp.from_ns == imp.to_ns or imp.key in seen:
            return
        seen.add(imp.key)
        plan.append(imp)

    for kind, node_id in execution_schedule(tree, start):
        node = tree.node(node_id)
        if kind == "fanin":
            for imp in fanin_entries(tree, node, ext):
                add(imp)
        elif kind == "fanout":
            exports = utility_exports(tree, node, ext)
            for target in fanout_targets(tree, node):
                for name in sorted(exports.resolutions):
                    res = exports.resolutions[name]
                    add(PlanImport(res.source_ns, target, name, Origin.UTILITY))
        else:  # eval
            if not node.is_pod or node.flags.test or node.flags.utility:
                continue
            ns = tree.namespace_of(node.id)
            try:
                refs = sorted(ext.referenced(node.code))
            except ParseFailure:
                refs = []
            for ref in refs:
                res = visible(node.parent).resolutions.get(ref)
                if res is not None and res.rule is Rule.PUBLIC_CHILD:
                    add(PlanImport(res.source_ns, ns, ref, Origin.PUBLIC_CHILD))
    return plan
