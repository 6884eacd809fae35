"""Call-graph ingestion: leveling, classification, arborescence, tree emission.

The pipeline turns a language-neutral call graph (see load_callgraph for the
JSON shape) into a pod/deck tree that the namespace rules can resolve:

    graph -> mark_level -> classify_nodes -> max_arborescence -> emit_tree

plus the reporting side (degree_stats, internal_function_stats, stats_report)
used by the CLI and the API server. Each stage is usable on its own; the
convert_graph wrapper runs them all and returns the assembled result.
"""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path

from podhive import names
from podhive.errors import (
    DanglingEdge,
    EmissionInvariantViolation,
    NameCollision,
    NotVisible,
    SchemaError,
    Unreachable,
)
from podhive.model import NodeKind, Tree

REGULAR = "Regular"
UTILITY = "Utility"
TEST = "Test"

# Virtual-root marker for arborescence parent maps. NUL keeps it out of the
# space of plausible function ids; load_callgraph rejects ids containing NUL.
VIRTUAL_ROOT = "\x00root"

_DEFINES_MARK = "# defines:"
_CALLS_MARK = "# calls:"


# --- graph ingestion ------------------------------------------------------

@dataclass(frozen=True)
class FunctionRec:
    id: str
    file: str
    loc: int
    code: str | None = None


@dataclass
class CallGraph:
    functions: list[FunctionRec]
    edges: list[tuple[str, str]]
    entries: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.by_id: dict[str, FunctionRec] = {f.id: f for f in self.functions}

    def callers_of(self) -> dict[str, set[str]]:
        """Distinct non-self callers per function id."""
        out: dict[str, set[str]] = {f.id: set() for f in self.functions}
        for u, v in self.edges:
            if u != v:
                out[v].add(u)
        return out

    def callees_of(self) -> dict[str, list[str]]:
        """Distinct non-self callees per function id, first-seen order."""
        out: dict[str, list[str]] = {f.id: [] for f in self.functions}
        for u, v in self.edges:
            if u != v and v not in out[u]:
                out[u].append(v)
        return out


def _want(doc, key, kind, path):
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected an object", path=path)
    value = doc.get(key)
    if value is None:
        raise SchemaError(f"{path}.{key}: missing", path=f"{path}.{key}")
    if not isinstance(value, kind):
        raise SchemaError(
            f"{path}.{key}: expected {kind.__name__}", path=f"{path}.{key}"
        )
    return value


def parse_callgraph(doc) -> CallGraph:
    """Validate a decoded call-graph document.

    Shape: {"functions": [{"id", "file", "loc", "code"?}, ...],
            "edges": [[caller, callee], ...], "entries": [id, ...]?}
    """
    if not isinstance(doc, dict):
        raise SchemaError("$: expected a JSON object", path="$")
    raw_functions = _want(doc, "functions", list, "$")
    raw_edges = _want(doc, "edges", list, "$")

    functions: list[FunctionRec] = []
    seen: set[str] = set()
    for i, item in enumerate(raw_functions):
        where = f"$.functions[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(f"{where}: expected an object", path=where)
        fid = item.get("id")
        if not isinstance(fid, str) or not fid or "\x00" in fid:
            raise SchemaError(f"{where}.id: expected a non-empty string", path=f"{where}.id")
        if fid in seen:
            raise SchemaError(f"{where}.id: duplicate id {fid!r}", path=f"{where}.id")
        seen.add(fid)
        file = item.get("file")
        if not isinstance(file, str) or not file:
            raise SchemaError(f"{where}.file: expected a non-empty string", path=f"{where}.file")
        loc = item.get("loc")
        if not isinstance(loc, int) or isinstance(loc, bool) or loc < 0:
            raise SchemaError(f"{where}.loc: expected a nonnegative integer", path=f"{where}.loc")
        code = item.get("code")
        if code is not None and not isinstance(code, str):
            raise SchemaError(f"{where}.code: expected a string", path=f"{where}.code")
        functions.append(FunctionRec(id=fid, file=file, loc=loc, code=code))

    edges: list[tuple[str, str]] = []
    for i, pair in enumerate(raw_edges):
        where = f"$.edges[{i}]"
        if (
            not isinstance(pair, (list, tuple))
            or len(pair) != 2
            or not all(isinstance(p, str) for p in pair)
        ):
            raise SchemaError(f"{where}: expected [caller, callee]", path=where)
        caller, callee = pair
        for endpoint in (caller, callee):
            if endpoint not in seen:
                raise DanglingEdge(
                    f"{where}: {endpoint!r} is not a declared function",
                    edge=[caller, callee],
                )
        edges.append((caller, callee))

    entries: list[str] = []
    raw_entries = doc.get("entries")
    if raw_entries is not None:
        if not isinstance(raw_entries, list):
            raise SchemaError("$.entries: expected a list", path="$.entries")
        for i, entry in enumerate(raw_entries):
            where = f"$.entries[{i}]"
            if not isinstance(entry, str):
                raise SchemaError(f"{where}: expected a string", path=where)
            if entry not in seen:
                raise SchemaError(f"{where}: unknown function {entry!r}", path=where)
            entries.append(entry)

    return CallGraph(functions=functions, edges=edges, entries=entries)


def load_callgraph(file) -> CallGraph:
    """Read and validate a call-graph JSON file."""
    text = Path(file).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise SchemaError(f"$: not valid JSON ({exc})", path="$") from exc
    return parse_callgraph(doc)


# --- statistics -----------------------------------------------------------

def _degree_rows(graph: CallGraph):
    ins: Counter = Counter()
    outs: Counter = Counter()
    callers: dict[str, set[str]] = {f.id: set() for f in graph.functions}
    recursive: set[str] = set()
    self_edges = 0
    for caller, callee in graph.edges:
        if caller == callee:
            recursive.add(caller)
            self_edges += 1
            continue
        outs[caller] += 1
        ins[callee] += 1
        callers[callee].add(caller)

    rows = []
    for fn in graph.functions:
        who = callers[fn.id]
        internal = bool(who) and all(graph.by_id[c].file == fn.file for c in who)
        rows.append(
            {
                "id": fn.id,
                "file": fn.file,
                "in": ins[fn.id],
                "out": outs[fn.id],
                "internal": internal,
                "recursive": fn.id in recursive,
            }
        )
    return rows, self_edges, sum(ins.values())


def degree_stats(graph: CallGraph) -> dict:
    """Per-function in/out degrees plus degree histograms.

    Degrees count edge instances over non-self edges; self edges surface only
    as the per-row recursive flag. Histogram keys are stringified degrees and
    only occupied buckets appear.
    """
    rows, _, _ = _degree_rows(graph)
    return {
        "functions": rows,
        "in_degree_histogram": dict(Counter(str(r["in"]) for r in rows)),
        "out_degree_histogram": dict(Counter(str(r["out"]) for r in rows)),
    }


def internal_function_stats(graph: CallGraph) -> dict:
    """Per-file totals: functions, internal functions, uncalled functions.

    A function is internal when it has at least one caller and every caller
    shares its file; zero-caller functions are tallied as uncalled instead.
    """
    rows, _, _ = _degree_rows(graph)
    per_file: dict[str, dict] = {}
    for row in rows:
        bucket = per_file.setdefault(
            row["file"], {"total": 0, "internal": 0, "uncalled": 0}
        )
        bucket["total"] += 1
        if row["internal"]:
            bucket["internal"] += 1
        if row["in"] == 0:
            bucket["uncalled"] += 1
    return {"per_file": per_file}


def stats_csv(graph: CallGraph) -> str:
    rows, _, _ = _degree_rows(graph)
    lines = ["id,file,in,out,internal"]
    for row in rows:
        lines.append(
            "%s,%s,%d,%d,%s"
            % (row["id"], row["file"], row["in"], row["out"], str(row["internal"]).lower())
        )
    return "\n".join(lines) + "\n"


def stats_report(graph: CallGraph) -> dict:
    """The full statistics document: rows, histograms, per-file, totals, CSV."""
    rows, self_edges, counted = _degree_rows(graph)
    report = {
        "functions": rows,
        "per_file": internal_function_stats(graph)["per_file"],
        "in_degree_histogram": dict(Counter(str(r["in"]) for r in rows)),
        "out_degree_histogram": dict(Counter(str(r["out"]) for r in rows)),
        "totals": {
            "functions": len(graph.functions),
            "edges": len(graph.edges),
            "self_edges": self_edges,
            "counted_edges": counted,
        },
        "csv": stats_csv(graph),
    }
    return report


# --- leveling ---------------------------------------------------------------

@dataclass
class Leveling:
    levels: dict[str, int]
    roots: list[str]
    warnings: list[str]


def mark_level(graph: CallGraph) -> Leveling:
    """Minimum BFS distance from a virtual root attached to in-degree-0 nodes.

    The virtual root sits at level 0, so every function lands at level >= 1.
    Functions unreachable that way (cycles with no rooted entry) are assigned
    1 + the maximum reachable level and flagged with a Cyclic warning.
    """
    indeg: Counter = Counter()
    adj: dict[str, set[str]] = {f.id: set() for f in graph.functions}
    for u, v in graph.edges:
        if u == v:
            continue
        indeg[v] += 1
        adj[u].add(v)

    roots = [f.id for f in graph.functions if indeg[f.id] == 0]
    levels: dict[str, int] = {}
    queue: deque[str] = deque()
    for r in roots:
        levels[r] = 1
        queue.append(r)
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if v not in levels:
                levels[v] = levels[u] + 1
                queue.append(v)

    warnings: list[str] = []
    stranded = [f.id for f in graph.functions if f.id not in levels]
    if stranded:
        fallback = 1 + max(levels.values(), default=0)
        for fid in stranded:
            levels[fid] = fallback
            warnings.append(f"Cyclic: {fid}")
    return Leveling(levels=levels, roots=roots, warnings=warnings)


# --- classification ---------------------------------------------------------

def classify_nodes(graph: CallGraph, leveling: Leveling) -> dict[str, str]:
    """Utility when callers span more than one level, Test when uncalled and
    not an entry hint, Regular otherwise."""
    callers = graph.callers_of()
    entries = set(graph.entries)
    classes: dict[str, str] = {}
    for fn in graph.functions:
        who = callers[fn.id]
        caller_levels = {leveling.levels[c] for c in who}
        if len(caller_levels) > 1:
            classes[fn.id] = UTILITY
        elif not who and fn.id not in entries:
            classes[fn.id] = TEST
        else:
            classes[fn.id] = REGULAR
    return classes


# --- maximum arborescence (Chu-Liu/Edmonds) ---------------------------------

def max_arborescence(
    nodes, edges: dict[tuple[str, str], float], root: str
) -> dict[str, str]:
    """Maximum-weight spanning arborescence rooted at `root`.

    `edges` maps (u, v) to weight. Self edges and edges into the root are
    ignored. Returns {child: parent} covering every node except the root.
    Raises Unreachable listing nodes no root path can cover.
    """
    node_set = set(nodes)
    node_set.add(root)
    usable: dict[tuple[str, str], float] = {}
    for (u, v), w in edges.items():
        if u == v or v == root or u not in node_set or v not in node_set:
            continue
        prev = usable.get((u, v))
        if prev is None or w > prev:
            usable[(u, v)] = w

    reach = {root}
    frontier = [root]
    adj: dict[str, list[str]] = {}
    for u, v in usable:
        adj.setdefault(u, []).append(v)
    while frontier:
        u = frontier.pop()
        for v in adj.get(u, ()):
            if v not in reach:
                reach.add(v)
                frontier.append(v)
    missing = sorted(node_set - reach)
    if missing:
        raise Unreachable(
            f"{len(missing)} node(s) unreachable from {root!r}", nodes=missing
        )

    tagged = {key: (w, key) for key, w in usable.items()}
    counter = iter(range(1, 2 * len(node_set) + 2))
    chosen = _edmonds(node_set, tagged, root, counter)
    return {v: u for (u, v) in chosen.values()}


def _edmonds(nodes: set, edges: dict, root, fresh) -> dict:
    """One contraction level. `edges` maps (u, v) -> (weight, original edge).

    Returns {original child: original (u, v) edge} for the chosen arborescence.
    Deterministic: ties broken by smallest source, then smallest target.
    """
    best: dict = {}
    for v in sorted(nodes):
        if v == root:
            continue
        cands = [
            (u, w, orig) for (u, t), (w, orig) in edges.items() if t == v
        ]
        if not cands:
            raise Unreachable(f"no inbound edge reaches {v!r}", nodes=[v])
        cands.sort(key=lambda t: (-t[1], t[0]))
        best[v] = cands[0]

    cycle = _cycle_in(best, root)
    if cycle is None:
        return {orig[1]: orig for (_, _, orig) in best.values()}

    cyc_set = set(cycle)
    cid = "\x00cyc%d" % next(fresh)
    inner_weight = {v: best[v][1] for v in cycle}

    new_edges: dict = {}
    came_from: dict = {}
    for (u, v), (w, orig) in sorted(edges.items()):
        nu = cid if u in cyc_set else u
        nv = cid if v in cyc_set else v
        if nu == nv:
            continue
        nw = w - inner_weight[v] if nv == cid else w
        key = (nu, nv)
        prev = new_edges.get(key)
        if prev is None or nw > prev[0]:
            new_edges[key] = (nw, orig)
            came_from[key] = (u, v)

    new_nodes = (nodes - cyc_set) | {cid}
    sub = _edmonds(new_nodes, new_edges, root, fresh)

    # Expand: the sub-solution fixes one edge entering the cycle; that edge's
    # true target keeps it, every other cycle node keeps its internal pick.
    result: dict = {}
    entered = None
    for orig in sub.values():
        key = _key_of(orig, new_edges)
        if key[1] == cid:
            entered = came_from[key][1]
        result[orig[1]] = orig
    for v in cycle:
        if v != entered:
            result[best[v][2][1]] = best[v][2]
    return result


def _key_of(orig, new_edges):
    for key, (_, cand) in new_edges.items():
        if cand == orig:
            return key
    raise AssertionError("chosen edge lost during contraction")


def _cycle_in(best, root):
    """A cycle in the chosen-parent map, as a list of nodes, or None."""
    color: dict = {}
    for start in sorted(best):
        if color.get(start) == 2:
            continue
        path = []
        v = start
        while v != root and color.get(v) != 2:
            if color.get(v) == 1:
                return path[path.index(v):]
            color[v] = 1
            path.append(v)
            v = best[v][0]
        for p in path:
            color[p] = 2
    return None


# --- name extraction for emitted pods ----------------------------------------

class CallGraphExtractor:
    """Reads the header lines emit_tree writes into every pod.

    Emitted pod code starts with `# defines: <name>` and optionally
    `# calls: <name>, <name>` before the imported source text, so emitted
    trees stay resolvable regardless of the functions' own language.
    """

    def defined(self, code: str) -> list[str]:
        out: list[str] = []
        for line in code.splitlines():
            if line.startswith(_DEFINES_MARK):
                for part in line[len(_DEFINES_MARK):].split(","):
                    part = part.strip()
                    if part and part not in out:
                        out.append(part)
        return out

    def referenced(self, code: str) -> set[str]:
        out: set[str] = set()
        for line in code.splitlines():
            if line.startswith(_CALLS_MARK):
                for part in line[len(_CALLS_MARK):].split(","):
                    part = part.strip()
                    if part:
                        out.add(part)
        return out


EXTRACTOR = CallGraphExtractor()


def _pod_code(fn: FunctionRec, callees: list[str]) -> str:
    lines = [f"{_DEFINES_MARK} {fn.id}"]
    if callees:
        lines.append(f"{_CALLS_MARK} {', '.join(callees)}")
    if fn.code:
        lines.append("")
        lines.append(fn.code.rstrip("\n"))
    return "\n".join(lines) + "\n"


# --- tree emission ------------------------------------------------------------

@dataclass
class ConversionResult:
    tree: Tree
    levels: dict[str, int]
    roots: list[str]
    classes: dict[str, str]
    roles: dict[str, str]
    parent_map: dict[str, str]
    decks: dict[str, str]
    pods: dict[str, str]
    warnings: list[str]


def emit_tree(
    graph: CallGraph,
    leveling: Leveling,
    classes: dict[str, str],
    parent_map: dict[str, str],
) -> ConversionResult:
    """Materialize the pod/deck tree.

    Regular and Utility functions each get a deck (named after the function)
    holding one pod with the function's code; Test functions become test pods.
    Deck nesting follows the arborescence; utility decks then move under the
    lowest common ancestor of their callers so Rule 3 covers every call site.
    Any call edge the namespace rules still cannot resolve escalates its
    target to a utility deck; if a fixpoint never resolves everything the
    emission fails with EmissionInvariantViolation.
    """
    tree = Tree.new()
    callers = graph.callers_of()
    callees = graph.callees_of()
    roles = dict(classes)
    warnings: list[str] = []

    decks: dict[str, str] = {}
    pods: dict[str, str] = {}
    deck_names: set[str] = set()

    def deck_name(fid: str) -> str:
        base = fid.replace("/", "_")
        name = base
        n = 2
        while name in deck_names:
            name = f"{base}_{n}"
            n += 1
        deck_names.add(name)
        return name

    def effective_parent(fid: str) -> str:
        p = parent_map.get(fid, VIRTUAL_ROOT)
        while p != VIRTUAL_ROOT and roles[p] == TEST:
            p = parent_map.get(p, VIRTUAL_ROOT)
        if p == VIRTUAL_ROOT:
            return tree.root_id
        return ensure_deck(p)

    def ensure_deck(fid: str) -> str:
        if fid in decks:
            return decks[fid]
        parent_deck = effective_parent(fid)
        deck = tree.create_node(NodeKind.DECK, parent_deck, name=deck_name(fid))
        decks[fid] = deck.id
        pod = tree.create_node(
            NodeKind.POD, deck.id, code=_pod_code(graph.by_id[fid], callees[fid])
        )
        pods[fid] = pod.id
        if callers[fid]:
            tree.set_flags(pod.id, public=True)
        return deck.id

    for fn in graph.functions:
        if roles[fn.id] != TEST:
            ensure_deck(fn.id)

    # Test pods live in the deck of their highest-level callee.
    for fn in graph.functions:
        if roles[fn.id] != TEST:
            continue
        home = tree.root_id
        called = callees[fn.id]
        if called:
            target = max(
                called, key=lambda c: (leveling.levels[c], -_corpus_pos(graph, c))
            )
            home = decks.get(target, tree.root_id)
        pod = tree.create_node(
            NodeKind.POD, home, code=_pod_code(graph.by_id[fn.id], called)
        )
        tree.set_flags(pod.id, test=True)
        pods[fn.id] = pod.id

    def container_of(fid: str) -> str:
        """The deck a function's call sites resolve from."""
        if roles[fid] == TEST:
            return tree.node(pods[fid]).parent
        return decks[fid]

    def relocate_utility(fid: str):
        deck_id = decks[fid]
        caller_decks = [container_of(c) for c in sorted(callers[fid])]
        target = _lca(tree, caller_decks) if caller_decks else tree.root_id
        off_limits = tree.subtree_ids(deck_id)
        while target in off_limits:
            target = tree.node(target).parent
        if target != tree.node(deck_id).parent:
            tree.move_node(deck_id, target)
        tree.set_flags(deck_id, utility=True)

    ordered = sorted(
        (fid for fid in decks if roles[fid] == UTILITY),
        key=lambda fid: (leveling.levels[fid], _corpus_pos(graph, fid)),
    )
    for fid in ordered:
        relocate_utility(fid)

    def rebuild_reexports():
        chains: dict[str, set[str]] = {}
        for deck_id in decks.values():
            chains[deck_id] = set()
        for u, v in _distinct_edges(graph):
            if roles[v] != REGULAR:
                continue
            target_deck = decks[v]
            cu = container_of(u)
            p = tree.node(target_deck).parent
            hops: list[str] = []
            while p is not None and p != cu:
                hops.append(p)
                p = tree.node(p).parent
            if p != cu:
                continue
            for deck_id in hops:
                if deck_id in chains:
                    chains[deck_id].add(v)
        for deck_id, exported in chains.items():
            tree.set_reexports(deck_id, sorted(exported))

    def resolves(u: str, v: str) -> bool:
        try:
            names.resolve(tree, v, pods[u], ext=EXTRACTOR)
            return True
        except (NotVisible, NameCollision):
            return False

    rebuild_reexports()
    for _ in range(2 * len(graph.functions) + 2):
        failed = [
            (u, v) for u, v in _distinct_edges(graph) if not resolves(u, v)
        ]
        if not failed:
            break
        progress = False
        for _, v in failed:
            if roles[v] == TEST:
                continue
            if roles[v] != UTILITY:
                roles[v] = UTILITY
                warnings.append(f"Escalated: {v}")
            before = (tree.node(decks[v]).parent, tree.node(decks[v]).flags.utility)
            relocate_utility(v)
            after = (tree.node(decks[v]).parent, tree.node(decks[v]).flags.utility)
            if before != after:
                progress = True
        rebuild_reexports()
        if not progress:
            break

    failed = [(u, v) for u, v in _distinct_edges(graph) if not resolves(u, v)]
    if failed:
        raise EmissionInvariantViolation(
            f"{len(failed)} call edge(s) do not resolve on the emitted tree",
            edges=[list(e) for e in failed],
        )
    tree.validate()

    return ConversionResult(
        tree=tree,
        levels=dict(leveling.levels),
        roots=list(leveling.roots),
        classes=classes,
        roles=roles,
        parent_map=parent_map,
        decks=decks,
        pods=pods,
        warnings=list(leveling.warnings) + warnings,
    )


def _corpus_pos(graph: CallGraph, fid: str) -> int:
    for i, fn in enumerate(graph.functions):
        if fn.id == fid:
            return i
    return len(graph.functions)


def _distinct_edges(graph: CallGraph):
    seen: set[tuple[str, str]] = set()
    for u, v in graph.edges:
        if u == v or (u, v) in seen:
            continue
        seen.add((u, v))
        yield u, v


def _lca(tree: Tree, node_ids: list[str]) -> str:
    def path(nid: str) -> list[str]:
        out = []
        cur = nid
        while cur is not None:
            out.append(cur)
            cur = tree.node(cur).parent
        out.reverse()
        return out

    paths = [path(n) for n in node_ids]
    best = tree.root_id
    for parts in zip(*paths):
        first = parts[0]
        if all(p == first for p in parts):
            best = first
        else:
            break
    return best


def arborescence_inputs(
    graph: CallGraph, leveling: Leveling
) -> tuple[list[str], dict[tuple[str, str], float]]:
    """Weighted edge set for the spanning step: call multiplicity per edge,
    plus zero-weight virtual-root edges to roots and stranded (cyclic) nodes
    so the arborescence always covers the whole graph."""
    weights: dict[tuple[str, str], float] = {}
    for u, v in graph.edges:
        if u == v:
            continue
        weights[(u, v)] = weights.get((u, v), 0) + 1
    covered = set(leveling.roots)
    adj: dict[str, set[str]] = {}
    for u, v in weights:
        adj.setdefault(u, set()).add(v)
    frontier = list(covered)
    while frontier:
        u = frontier.pop()
        for v in adj.get(u, ()):
            if v not in covered:
                covered.add(v)
                frontier.append(v)
    for fn in graph.functions:
        if fn.id in leveling.roots or fn.id not in covered:
            weights[(VIRTUAL_ROOT, fn.id)] = 0
    nodes = [VIRTUAL_ROOT] + [f.id for f in graph.functions]
    return nodes, weights


def convert_graph(graph: CallGraph) -> ConversionResult:
    """Run the whole pipeline: level, classify, span, emit."""
    leveling = mark_level(graph)
    classes = classify_nodes(graph, leveling)
    nodes, weights = arborescence_inputs(graph, leveling)
    parent_map = max_arborescence(nodes, weights, VIRTUAL_ROOT)
    return emit_tree(graph, leveling, classes, parent_map)
