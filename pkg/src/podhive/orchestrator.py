"""Incremental evaluation runtime.

Drives a kernel client through the execution schedule while maintaining two
pieces of live state: per-pod statuses and the import ledger. The ledger
holds at most one entry per (from_ns, to_ns, name); each entry knows which
nodes requested it (tests that fanned it in, pods that needed it just in
time, explicit imports) and whether it is live in the kernel or pending on
a binding that does not exist yet.

Everything the runtime issues is a plain kernel op: EvalInNS, AddImport,
DeleteImport, DeleteNames. Imports copy values, so redefining a name only
requires replaying the copy chain; pods are never re-evaluated behind the
user's back.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from .errors import (
    KernelEvalError,
    KernelUnavailable,
    NotVisible,
    ParseFailure,
    PodhiveError,
    Timeout,
    TransportClosed,
)
from .flatten import Outcome
from .model import Node, Tree
from .names import (
    DEFAULT_EXTRACTOR,
    NameExtractor,
    Origin,
    PlanImport,
    Rule,
    execution_schedule,
    fanin_entries,
    fanout_targets,
    utility_exports,
    visible_set,
)

EventSink = Callable[[dict], None]


class PodState(str, Enum):
    UNEVALUATED = "Unevaluated"
    QUEUED = "Queued"
    RUNNING = "Running"
    OK = "Ok"
    ERROR = "Error"
    STALE = "Stale"


@dataclass
class PodStatus:
    state: PodState = PodState.UNEVALUATED
    run_seq: int = 0
    last_result: Optional[dict] = None
    last_error: Optional[dict] = None
    streams: list = field(default_factory=list)
    # names the last eval's code defined; drives removal sync on re-eval
    defined: tuple = ()

    def as_dict(self) -> dict:
        return {
            "state": self.state.value,
            "run_seq": self.run_seq,
            "last_result": self.last_result,
            "last_error": self.last_error,
            "streams": [list(s) for s in self.streams],
        }


@dataclass
class LedgerEntry:
    from_ns: str
    to_ns: str
    name: str
    origin: Origin
    requesters: set = field(default_factory=set)
    pending: bool = True

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.from_ns, self.to_ns, self.name)

    def as_dict(self) -> dict:
        return {
            "from": self.from_ns,
            "to": self.to_ns,
            "name": self.name,
            "origin": self.origin.value,
            "pending": self.pending,
        }


class Orchestrator:
    """Runs a tree against a kernel and keeps bindings convergent under edits.

    The tree is shared with the caller; the orchestrator never mutates it.
    All public operations are synchronous and single-threaded by contract
    (the API server serializes writers).
    """

    def __init__(
        self,
        tree: Tree,
        client=None,
        *,
        ext: NameExtractor = DEFAULT_EXTRACTOR,
        events: Optional[EventSink] = None,
    ):
        if client is None:
            from .protocol import LocalKernelClient

            client = LocalKernelClient()
        self.tree = tree
        self.client = client
        self.ext = ext
        self.events = events
        self._statuses: dict[str, PodStatus] = {}
        self._ledger: dict[tuple[str, str, str], LedgerEntry] = {}
        # test/utility nodes that have executed their fanin/fanout step;
        # sync passes only touch these
        self._fanned: set[str] = set()
        # pod id -> ledger keys that pod's last eval requested just in time
        self._jit_held: dict[str, set] = {}
        self._seq = 0

    # -- views -----------------------------------------------------------

    def status(self, pod_id: str) -> PodStatus:
        return self._statuses.setdefault(pod_id, PodStatus())

    def statuses(self) -> dict[str, PodStatus]:
        return dict(self._statuses)

    def ledger_entries(self) -> list[LedgerEntry]:
        return [self._ledger[k] for k in sorted(self._ledger)]

    def live_ledger_keys(self) -> set[tuple[str, str, str]]:
        return {k for k, e in self._ledger.items() if not e.pending}

    # -- public operations -------------------------------------------------

    def run_tree(self, start: Optional[str] = None) -> list[tuple[str, PodStatus]]:
        return self._run_schedule(execution_schedule(self.tree, start))

    def run_pod(self, pod_id: str) -> PodStatus:
        node = self.tree.node(pod_id)
        self._run_schedule(execution_schedule(self.tree, node.id))
        return self.status(pod_id)

    # separate entry points for test and utility targets share the engine;
    # the schedule already knows what each node kind needs around its eval
    run_test = run_pod
    run_utility = run_pod

    def reeval_pod(self, pod_id: str) -> PodStatus:
        """Re-evaluate one pod after its code changed and bring every binding
        the edit can reach back in line with a fresh run of the snapshot."""
        node = self.tree.node(pod_id)
        self._run_schedule(execution_schedule(self.tree, node.id))
        self._sync_fanins()
        self._sync_fanouts()
        return self.status(pod_id)

    def resync(self):
        """Re-align fanned-in/out entries with the current tree. Callers use
        this after structural edits (flags, reexports) that change visibility
        without touching any namespace path."""
        self._sync_fanins()
        self._sync_fanouts()

    def probe(self, node_id: str, expr: str) -> Outcome:
        """Evaluate an expression in a node's namespace without recording a
        status. Free names resolve exactly as a pod run would resolve them."""
        node = self.tree.node(node_id)
        ns = self.tree.namespace_of(node.id)
        owner = self.tree.owner_of_namespace(node.id)
        if owner.is_deck:
            try:
                refs = sorted(self.ext.referenced(expr))
            except ParseFailure:
                refs = []
            # additive only: an ad-hoc expression must not release imports
            # that the node's own code established
            self._jit_imports(node.id, owner, ns, refs, realign=False)
        try:
            value = self.client.eval_in_ns(ns, expr)
        except KernelEvalError as exc:
            return Outcome.err(exc.ename)
        return Outcome(value=value)

    def import_path(self, node_id: str, path: str, names: Iterable[str]) -> list[LedgerEntry]:
        """Explicit full-path import: copy names from the deck at `path`
        (absolute, or relative to the requesting node's deck) into the
        requesting node's namespace."""
        node = self.tree.node(node_id)
        target = self.tree.resolve_path(node_id, path)
        from_ns = self.tree.namespace_of(target.id)
        to_ns = self.tree.namespace_of(node.id)
        out: list[LedgerEntry] = []
        for name in names:
            if from_ns == to_ns:
                raise NotVisible(f"{path!r} is the requesting namespace itself", path=path, name=name)
            imp = PlanImport(from_ns, to_ns, name, Origin.EXPLICIT_PATH)
            entry = self._ensure_entry(imp, node.id)
            self._issue_and_ripple(entry)
            out.append(entry)
        return out

    def mark_stale(self, pod_id: str):
        st = self.status(pod_id)
        if st.state is PodState.OK:
            st.state = PodState.STALE
            self._emit("pod_status", node=pod_id, status=st.as_dict())

    def delete_subtree(self, node_id: str) -> list[str]:
        """Delete a node and everything under it, retracting what the subtree
        contributed: names defined into surviving namespaces cascade away and
        ledger entries touching dying namespaces disappear."""
        nodes = list(self.tree.walk(node_id))
        doomed_ids = {n.id for n in nodes}
        dead_ns = {
            self.tree.namespace_of(n.id)
            for n in nodes
            if n.is_deck or n.flags.test or n.flags.utility
        }
        retire: list[tuple[str, tuple]] = []
        for n in nodes:
            if n.is_pod and not (n.flags.test or n.flags.utility):
                ns = self.tree.namespace_of(n.id)
                st = self._statuses.get(n.id)
                if ns not in dead_ns and st is not None and st.defined:
                    retire.append((ns, st.defined))

        removed = self.tree.delete_node(node_id)
        for nid in doomed_ids:
            self._statuses.pop(nid, None)
            self._fanned.discard(nid)
            self._jit_held.pop(nid, None)

        reconcile = self._purge_entries(dead_ns, doomed_ids)
        visited: set = set()
        for ns, defined in retire:
            for name in defined:
                if self._local_definer_exists(ns, name):
                    continue
                self.client.delete_names(ns, [name])
                self._emit("names_deleted", ns=ns, names=[name])
                self._unbind_cascade(ns, name, visited)
        for to_ns, name in reconcile:
            self._reconcile_binding(to_ns, name, set())
        self._sync_fanins()
        self._sync_fanouts()
        return removed

    def retarget_namespaces(self, old_ns_of: dict[str, str]):
        """After a move or rename changed namespace paths: state keyed by the
        old paths is dropped, affected pods fall back to Unevaluated, and
        fanned nodes realign. `old_ns_of` maps node id -> namespace before
        the mutation."""
        dead_ns: set = set()
        for nid, old in old_ns_of.items():
            if nid not in self.tree.nodes:
                continue
            if self.tree.namespace_of(nid) == old:
                continue
            dead_ns.add(old)
            node = self.tree.node(nid)
            if node.is_pod and self._statuses.pop(nid, None) is not None:
                self._emit("pod_status", node=nid, status=PodStatus().as_dict())
            self._jit_held.pop(nid, None)
        if not dead_ns:
            return
        reconcile = self._purge_entries(dead_ns, set())
        for to_ns, name in reconcile:
            self._reconcile_binding(to_ns, name, set())
        self._sync_fanins()
        self._sync_fanouts()

    def _purge_entries(
        self, dead_ns: set, doomed_ids: set
    ) -> list[tuple[str, str]]:
        """Remove ledger entries sourced from, targeting, or requested only by
        dead state. Returns surviving (to_ns, name) targets that lost a live
        inbound copy and need reconciling once the purge is complete."""
        reconcile: list[tuple[str, str]] = []
        for key in sorted(self._ledger):
            entry = self._ledger[key]
            entry.requesters -= doomed_ids
            if entry.requesters and not (
                entry.from_ns in dead_ns or entry.to_ns in dead_ns
            ):
                continue
            del self._ledger[key]
            self._emit("import_deleted", **entry.as_dict())
            if entry.pending or entry.to_ns in dead_ns:
                continue
            try:
                self.client.delete_import(entry.to_ns, entry.name)
            except KernelEvalError:
                pass
            reconcile.append((entry.to_ns, entry.name))
        return reconcile

    def restart_kernel(self):
        self.client.restart()
        self._statuses.clear()
        self._ledger.clear()
        self._fanned.clear()
        self._jit_held.clear()
        self._emit("kernel_restarted")

    def close(self):
        self.client.close()

    # -- schedule engine ---------------------------------------------------

    def _run_schedule(self, steps) -> list[tuple[str, PodStatus]]:
        trace: list[tuple[str, PodStatus]] = []
        for kind, node_id in steps:
            node = self.tree.node(node_id)
            if kind == "fanin":
                self._fanin(node)
            elif kind == "fanout":
                self._fanout(node)
            else:
                self._eval_pod(node)
                trace.append((node_id, self.status(node_id)))
        return trace

    def _fanin(self, node: Node):
        self._fanned.add(node.id)
        for imp in fanin_entries(self.tree, node, self.ext):
            entry = self._ensure_entry(imp, node.id)
            self._issue_and_ripple(entry)

    def _fanout(self, node: Node):
        self._fanned.add(node.id)
        exports = utility_exports(self.tree, node, self.ext)
        for target in fanout_targets(self.tree, node):
            for name in sorted(exports.resolutions):
                res = exports.resolutions[name]
                imp = PlanImport(res.source_ns, target, name, Origin.UTILITY)
                entry = self._ensure_entry(imp, node.id)
                self._issue_and_ripple(entry)

    def _eval_pod(self, pod: Node):
        ns = self.tree.namespace_of(pod.id)
        st = self.status(pod.id)
        st.state = PodState.RUNNING
        self._emit("pod_status", node=pod.id, status=st.as_dict())

        owner = self.tree.owner_of_namespace(pod.id)
        try:
            refs = sorted(self.ext.referenced(pod.code))
        except ParseFailure:
            refs = []
        if owner.is_deck:
            self._jit_imports(pod.id, owner, ns, refs)

        try:
            new_defined = tuple(self.ext.defined(pod.code))
        except ParseFailure:
            new_defined = ()
        for name in st.defined:
            if name not in new_defined:
                self._retire_definition(pod, ns, name)
        self._pre_reset(pod, ns, [n for n in new_defined if n in st.defined])

        self._seq += 1
        st.run_seq = self._seq
        st.streams = []
        st.last_result = None
        st.last_error = None
        if pod.code.strip() == "":
            st.state = PodState.OK
        else:
            def on_stream(channel, text, _pod=pod, _st=st):
                _st.streams.append((channel, text))
                self._emit("stream", node=_pod.id, channel=channel, text=text)

            try:
                data = self.client.eval_in_ns(
                    ns, pod.code, names=new_defined, on_stream=on_stream
                )
            except KernelEvalError as exc:
                st.state = PodState.ERROR
                st.last_error = {"ename": exc.ename, "evalue": exc.evalue}
            except (Timeout, TransportClosed, OSError) as exc:
                st.state = PodState.ERROR
                st.last_error = {"ename": "KernelUnavailable", "evalue": str(exc)}
                self._emit("pod_status", node=pod.id, status=st.as_dict())
                raise KernelUnavailable(f"kernel lost while evaluating {pod.id}") from exc
            else:
                st.state = PodState.OK
                if data is not None:
                    st.last_result = {"mime": "text/plain", "data": data}
        st.defined = new_defined
        self._emit("pod_status", node=pod.id, status=st.as_dict())
        # bindings this pod (re)bound flow to every copy that exists so far;
        # pending copies materialize here too
        self._replay_from(ns, new_defined)

    # -- just-in-time imports ----------------------------------------------

    def _jit_needs(self, owner: Node, ns: str, refs: list[str]) -> dict:
        vis = visible_set(self.tree, owner.id, self.ext, strict=False)
        needed = {}
        for ref in refs:
            res = vis.resolutions.get(ref)
            if res is not None and res.rule is Rule.PUBLIC_CHILD and res.source_ns != ns:
                imp = PlanImport(res.source_ns, ns, ref, Origin.PUBLIC_CHILD)
                needed[imp.key] = imp
        return needed

    def _jit_imports(self, requester: str, owner: Node, ns: str, refs: list[str],
                     *, realign: bool = True):
        needed = self._jit_needs(owner, ns, refs)
        held = self._jit_held.setdefault(requester, set())
        if realign:
            # only a re-evaluation redefines what the requester's code needs;
            # anything it held that the new refs no longer cover is released
            for key in sorted(held - set(needed)):
                held.discard(key)
                self._drop_requester(key, requester)
        for key in sorted(set(needed) - held):
            held.add(key)
        for key in sorted(needed):
            entry = self._ensure_entry(needed[key], requester)
            self._issue_and_ripple(entry)

    # -- ledger mechanics ----------------------------------------------------

    def _ensure_entry(self, imp: PlanImport, requester: str) -> LedgerEntry:
        entry = self._ledger.get(imp.key)
        if entry is None:
            entry = LedgerEntry(imp.from_ns, imp.to_ns, imp.name, imp.origin)
            self._ledger[imp.key] = entry
        entry.requesters.add(requester)
        return entry

    def _try_issue(self, entry: LedgerEntry) -> bool:
        """AddImport for one entry. Failure is not an error: the source
        binding does not exist yet, so the entry waits for replay."""
        try:
            self.client.add_import(entry.from_ns, entry.to_ns, entry.name)
        except KernelEvalError:
            entry.pending = True
            return False
        entry.pending = False
        self._emit("import_issued", **entry.as_dict())
        return True

    def _issue_and_ripple(self, entry: LedgerEntry):
        """Issue one entry; if that materialized a previously missing
        binding, push it through copies waiting downstream."""
        was_pending = entry.pending
        if self._try_issue(entry) and was_pending:
            self._replay_from(entry.to_ns, [entry.name])

    def _entries_from(self, ns: str, name: str) -> list[LedgerEntry]:
        return [
            self._ledger[k]
            for k in sorted(self._ledger)
            if k[0] == ns and k[2] == name
        ]

    def _replay_from(self, ns: str, names: Iterable[str]):
        """Push a (re)bound value through every copy chain that starts at ns.

        Each namespace is expanded at most once per replay, so loops
        terminate; a chain arriving back at the seed is reported."""
        for name in sorted(set(names)):
            enqueued = {ns}
            queue = deque([ns])
            while queue:
                cur = queue.popleft()
                for entry in self._entries_from(cur, name):
                    was_live = not entry.pending
                    issued = self._try_issue(entry)
                    if not issued:
                        # a copy that existed lost its source: the stale
                        # value downstream has to go too
                        if was_live:
                            self._reconcile_binding(entry.to_ns, name, set())
                        continue
                    if entry.to_ns == ns:
                        self._emit(
                            "warning",
                            code="ReplayCycle",
                            message=f"import chain for {name!r} loops back to {ns} via {entry.from_ns}",
                        )
                        continue
                    if entry.to_ns not in enqueued:
                        enqueued.add(entry.to_ns)
                        queue.append(entry.to_ns)

    def _local_definer_exists(self, ns: str, name: str, *, skip_pod: Optional[str] = None) -> bool:
        """True if some pod evaluating in `ns` currently defines `name`.

        Checks code, not run history: the question is what a fresh run of
        the snapshot would bind."""
        for node in self.tree.walk():
            if not node.is_pod or node.id == skip_pod:
                continue
            if self.tree.namespace_of(node.id) != ns:
                continue
            try:
                if name in self.ext.defined(node.code):
                    return True
            except ParseFailure:
                continue
        return False

    def _pre_reset(self, pod: Node, ns: str, names: Iterable[str]):
        """Names the pod is about to rebind go back to their pre-shadow
        state first: a failing statement must leave behind exactly what a
        fresh run would, not the previous run's value. Restores from a live
        inbound copy when one exists, else removes the binding."""
        for name in names:
            alternates = [
                e
                for k, e in sorted(self._ledger.items())
                if k[1] == ns and k[2] == name and not e.pending
            ]
            if any(self._try_issue(alt) for alt in alternates):
                continue
            if self._local_definer_exists(ns, name, skip_pod=pod.id):
                continue
            self.client.delete_names(ns, [name])

    def _retire_definition(self, pod: Node, ns: str, name: str):
        """A pod's new code dropped `name`. Remove the binding unless a
        sibling still defines it, then flip downstream copies to pending."""
        if self._local_definer_exists(ns, name, skip_pod=pod.id):
            return
        self.client.delete_names(ns, [name])
        self._emit("names_deleted", ns=ns, names=[name])
        self._unbind_cascade(ns, name, set())

    def _unbind_cascade(self, ns: str, name: str, visited: set):
        """The binding for `name` vanished from `ns`: every live copy out of
        `ns` is now stale, so delete those copies (unless re-sourced) and
        keep cascading."""
        if (ns, name) in visited:
            return
        visited.add((ns, name))
        for entry in self._entries_from(ns, name):
            if entry.pending:
                continue
            entry.pending = True
            self._emit("import_pending", **entry.as_dict())
            self._reconcile_binding(entry.to_ns, name, visited)

    def _reconcile_binding(self, ns: str, name: str, visited: set):
        """An inbound copy of `name` into `ns` went away. Restore the binding
        from another live entry or a local definition, else remove it."""
        alternates = [
            e
            for k, e in sorted(self._ledger.items())
            if k[1] == ns and k[2] == name and not e.pending
        ]
        for alt in alternates:
            if self._try_issue(alt):
                self._replay_from(ns, [name])
                return
        if self._local_definer_exists(ns, name):
            return
        self.client.delete_names(ns, [name])
        self._emit("names_deleted", ns=ns, names=[name])
        self._unbind_cascade(ns, name, visited)

    def _drop_requester(self, key: tuple[str, str, str], requester: str):
        entry = self._ledger.get(key)
        if entry is None:
            return
        entry.requesters.discard(requester)
        if entry.requesters:
            return
        was_live = not entry.pending
        del self._ledger[key]
        self._emit("import_deleted", **entry.as_dict())
        if was_live:
            try:
                self.client.delete_import(entry.to_ns, entry.name)
            except KernelEvalError:
                pass
            self._reconcile_binding(entry.to_ns, entry.name, set())

    # -- plan sync ----------------------------------------------------------

    def _sync_fanins(self):
        """Re-align every fanned-in test node's entries with the current
        snapshot; the static fan-in list changes when edits add or remove
        visible names in the parent deck."""
        for kind, node_id in execution_schedule(self.tree):
            if kind != "fanin" or node_id not in self._fanned:
                continue
            node = self.tree.node(node_id)
            target = {imp.key: imp for imp in fanin_entries(self.tree, node, self.ext)}
            current = {
                k for k, e in self._ledger.items() if node_id in e.requesters
            }
            for key in sorted(current - set(target)):
                self._drop_requester(key, node_id)
            for key in sorted(target):
                entry = self._ensure_entry(target[key], node_id)
                if entry.pending:
                    self._issue_and_ripple(entry)

    def _sync_fanouts(self):
        for kind, node_id in execution_schedule(self.tree):
            if kind != "fanout" or node_id not in self._fanned:
                continue
            node = self.tree.node(node_id)
            exports = utility_exports(self.tree, node, self.ext)
            target = {}
            for tgt in fanout_targets(self.tree, node):
                for name in sorted(exports.resolutions):
                    res = exports.resolutions[name]
                    imp = PlanImport(res.source_ns, tgt, name, Origin.UTILITY)
                    target[imp.key] = imp
            current = {k for k, e in self._ledger.items() if node_id in e.requesters}
            for key in sorted(current - set(target)):
                self._drop_requester(key, node_id)
            for key in sorted(target):
                entry = self._ensure_entry(target[key], node_id)
                if entry.pending:
                    self._issue_and_ripple(entry)

    # -- events --------------------------------------------------------------

    def _emit(self, type_: str, **fields):
        if self.events is not None:
            evt = {"type": type_}
            evt.update(fields)
            self.events(evt)
