"""Hierarchical code store: decks own namespaces, pods hold code.

The tree is the single mutable structure in the engine. Everything else
(name resolution, run scheduling, persistence) works over a snapshot of it.
Node ids are UUID strings and never change; sibling order is a dense index
shared by child decks and child pods alike.

Namespaces are slash paths. The root deck's namespace is ``/ROOT``; a child
deck appends its name; a pod normally shares its deck's namespace, except
test and utility pods, which get a private namespace keyed by their id.
"""

from __future__ import annotations

import copy
import uuid
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    DuplicateSiblingName,
    EscapesRoot,
    IndexOutOfRange,
    InvalidName,
    InvalidTree,
    FlagConflict,
    NoSuchSegment,
    ParentIsPod,
    RootImmutable,
    UnknownNode,
    UnknownParent,
    WouldCreateCycle,
)

ROOT_NAME = "ROOT"


class NodeKind(str, Enum):
    DECK = "Deck"
    POD = "Pod"


@dataclass
class Flags:
    public: bool = False
    utility: bool = False
    test: bool = False

    def to_dict(self) -> dict:
        return {"public": self.public, "utility": self.utility, "test": self.test}

    @classmethod
    def from_dict(cls, d: dict) -> "Flags":
        return cls(
            public=bool(d.get("public", False)),
            utility=bool(d.get("utility", False)),
            test=bool(d.get("test", False)),
        )


@dataclass
class Node:
    id: str
    kind: NodeKind
    parent: str | None
    index: int
    name: str | None = None          # decks only
    flags: Flags = field(default_factory=Flags)
    code: str = ""                   # pods only
    folded: bool = False
    reexports: list[str] = field(default_factory=list)  # decks only

    @property
    def is_deck(self) -> bool:
        return self.kind is NodeKind.DECK

    @property
    def is_pod(self) -> bool:
        return self.kind is NodeKind.POD

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "parent": self.parent,
            "index": self.index,
            "name": self.name,
            "flags": self.flags.to_dict(),
            "code": self.code if self.is_pod else None,
            "folded": self.folded,
            "reexports": list(self.reexports),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        kind = NodeKind(d["kind"])
        return cls(
            id=d["id"],
            kind=kind,
            parent=d.get("parent"),
            index=int(d["index"]),
            name=d.get("name"),
            flags=Flags.from_dict(d.get("flags") or {}),
            code=d.get("code") or "",
            folded=bool(d.get("folded", False)),
            reexports=list(d.get("reexports") or []),
        )


def new_id() -> str:
    return str(uuid.uuid4())


class Tree:
    """Mutable pod/deck tree with ordered siblings."""

    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.root_id: str = ""

    @classmethod
    def new(cls) -> "Tree":
        tree = cls()
        root = Node(id=new_id(), kind=NodeKind.DECK, parent=None, index=0, name=ROOT_NAME)
        tree.nodes[root.id] = root
        tree.root_id = root.id
        return tree

    # -- basics ----------------------------------------------------------

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node {node_id!r}", node=node_id) from None

    @property
    def root(self) -> Node:
        return self.nodes[self.root_id]

    def children(self, deck_id: str) -> list[Node]:
        kids = [n for n in self.nodes.values() if n.parent == deck_id]
        kids.sort(key=lambda n: n.index)
        return kids

    def child_decks(self, deck_id: str) -> list[Node]:
        return [n for n in self.children(deck_id) if n.is_deck]

    def child_pods(self, deck_id: str) -> list[Node]:
        return [n for n in self.children(deck_id) if n.is_pod]

    def walk(self, start: str | None = None):
        """Depth-first document order: node, then children by index."""
        node = self.node(start or self.root_id)
        yield node
        if node.is_deck:
            for child in self.children(node.id):
                yield from self.walk(child.id)

    def subtree_ids(self, node_id: str) -> set[str]:
        return {n.id for n in self.walk(node_id)}

    def is_ancestor(self, maybe_ancestor: str, node_id: str) -> bool:
        cur = self.node(node_id).parent
        while cur is not None:
            if cur == maybe_ancestor:
                return True
            cur = self.nodes[cur].parent
        return False

    def depth(self, node_id: str) -> int:
        d = 0
        cur = self.node(node_id).parent
        while cur is not None:
            d += 1
            cur = self.nodes[cur].parent
        return d

    def snapshot(self) -> "Tree":
        return copy.deepcopy(self)

    # -- namespaces and paths ---------------------------------------------

    def namespace_of(self, node_id: str) -> str:
        node = self.node(node_id)
        if node.id == self.root_id:
            return "/" + ROOT_NAME
        parent_ns = self.namespace_of(node.parent)
        if node.is_deck:
            return parent_ns + "/" + (node.name or node.id)
        if node.flags.test or node.flags.utility:
            return parent_ns + "/" + node.id
        return parent_ns

    def owner_of_namespace(self, node_id: str) -> Node:
        """The node whose namespace `node_id` evaluates in: the node itself
        for decks and test/utility pods, the parent deck for regular pods."""
        node = self.node(node_id)
        if node.is_deck or node.flags.test or node.flags.utility:
            return node
        return self.node(node.parent)

    def path_of(self, node_id: str) -> str:
        node = self.node(node_id)
        if node.id == self.root_id:
            return "/"
        segs = []
        cur = node
        while cur.id != self.root_id:
            segs.append(cur.name if cur.is_deck else cur.id)
            cur = self.nodes[cur.parent]
        return "/" + "/".join(reversed(segs))

    def resolve_path(self, origin_id: str, path: str) -> Node:
        """Walk a slash path. Absolute paths start at the root; relative
        paths start at the origin's deck (a pod's origin is its parent deck).
        ``..`` steps up; the final segment may name a pod by id."""
        if path == "":
            raise NoSuchSegment("empty path", path=path)
        origin = self.node(origin_id)
        if path.startswith("/"):
            cur = self.root
            raw = path[1:]
        else:
            cur = origin if origin.is_deck else self.node(origin.parent)
            raw = path
        if raw == "":
            return cur
        segments = raw.split("/")
        for i, seg in enumerate(segments):
            last = i == len(segments) - 1
            if seg in ("", "."):
                raise NoSuchSegment(f"bad segment {seg!r} in {path!r}", path=path)
            if seg == "..":
                if cur.id == self.root_id:
                    raise EscapesRoot(f"{path!r} steps above the root", path=path)
                cur = self.nodes[cur.parent]
                continue
            if cur.is_pod:
                raise NoSuchSegment(f"{seg!r}: pods have no children", path=path)
            match = None
            for child in self.children(cur.id):
                if child.is_deck and child.name == seg:
                    match = child
                    break
            if match is None and last:
                for child in self.children(cur.id):
                    if child.is_pod and child.id == seg:
                        match = child
                        break
            if match is None:
                raise NoSuchSegment(f"no segment {seg!r} under {self.path_of(cur.id)}", path=path)
            cur = match
        return cur

    # -- mutations ---------------------------------------------------------

    def create_node(
        self,
        kind: NodeKind | str,
        parent_id: str,
        index: int | None = None,
        *,
        name: str | None = None,
        code: str = "",
    ) -> Node:
        kind = NodeKind(kind)
        if parent_id not in self.nodes:
            raise UnknownParent(f"no parent {parent_id!r}", parent=parent_id)
        parent = self.nodes[parent_id]
        if parent.is_pod:
            raise ParentIsPod("pods cannot have children", parent=parent_id)
        siblings = self.children(parent_id)
        if index is None:
            index = len(siblings)
        if not 0 <= index <= len(siblings):
            raise IndexOutOfRange(f"index {index} not in [0, {len(siblings)}]", index=index)
        node = Node(id=new_id(), kind=kind, parent=parent_id, index=index, code=code)
        if kind is NodeKind.DECK:
            node.name = name or node.id
            self._check_sibling_name(parent_id, node.name, exclude=node.id)
        for sib in siblings[index:]:
            sib.index += 1
        self.nodes[node.id] = node
        return node

    def delete_node(self, node_id: str) -> list[str]:
        node = self.node(node_id)
        if node.id == self.root_id:
            raise RootImmutable("cannot delete the root deck")
        doomed = sorted(self.subtree_ids(node_id))
        parent_id = node.parent
        for nid in doomed:
            del self.nodes[nid]
        self._reindex(parent_id)
        return doomed

    def move_node(self, node_id: str, new_parent_id: str, index: int | None = None) -> Node:
        node = self.node(node_id)
        if node.id == self.root_id:
            raise RootImmutable("cannot move the root deck")
        if new_parent_id not in self.nodes:
            raise UnknownParent(f"no parent {new_parent_id!r}", parent=new_parent_id)
        new_parent = self.nodes[new_parent_id]
        if new_parent.is_pod:
            raise ParentIsPod("pods cannot have children", parent=new_parent_id)
        if node_id == new_parent_id or self.is_ancestor(node_id, new_parent_id):
            raise WouldCreateCycle(f"{node_id} would contain itself", node=node_id)
        if node.is_deck:
            self._check_sibling_name(new_parent_id, node.name, exclude=node.id)
        old_parent = node.parent
        siblings = [n for n in self.children(new_parent_id) if n.id != node_id]
        if index is None:
            index = len(siblings)
        if not 0 <= index <= len(siblings):
            raise IndexOutOfRange(f"index {index} not in [0, {len(siblings)}]", index=index)
        node.parent = new_parent_id
        node.index = len(self.nodes) + 1  # park past the end, then renumber
        for pos, sib in enumerate(siblings):
            sib.index = pos if pos < index else pos + 1
        node.index = index
        if old_parent != new_parent_id:
            self._reindex(old_parent)
        return node

    def rename_deck(self, deck_id: str, name: str) -> Node:
        node = self.node(deck_id)
        if node.is_pod:
            raise InvalidName("pods have no name", node=deck_id)
        if node.id == self.root_id:
            raise RootImmutable("the root deck keeps its name")
        if not name or "/" in name or name in (".", ".."):
            raise InvalidName(f"bad deck name {name!r}", name=name)
        self._check_sibling_name(node.parent, name, exclude=deck_id)
        node.name = name
        return node

    def set_code(self, pod_id: str, code: str) -> Node:
        node = self.node(pod_id)
        if node.is_deck:
            raise InvalidTree("decks carry no code", node=pod_id)
        node.code = code
        return node

    def set_flags(
        self,
        node_id: str,
        *,
        public: bool | None = None,
        utility: bool | None = None,
        test: bool | None = None,
    ) -> Node:
        node = self.node(node_id)
        f = node.flags
        new = Flags(
            public=f.public if public is None else public,
            utility=f.utility if utility is None else utility,
            test=f.test if test is None else test,
        )
        if new.utility and new.test:
            raise FlagConflict("utility and test are mutually exclusive", node=node_id)
        node.flags = new
        return node

    def set_reexports(self, deck_id: str, names: list[str]) -> Node:
        node = self.node(deck_id)
        if node.is_pod:
            raise InvalidTree("pods have no reexports", node=deck_id)
        node.reexports = list(names)
        return node

    def set_folded(self, node_id: str, folded: bool) -> Node:
        node = self.node(node_id)
        node.folded = bool(folded)
        return node

    # -- consistency --------------------------------------------------------

    def _check_sibling_name(self, parent_id: str, name: str | None, exclude: str):
        if name is None:
            return
        for sib in self.children(parent_id):
            if sib.id == exclude:
                continue
            taken = sib.name if sib.is_deck else sib.id
            if taken == name:
                raise DuplicateSiblingName(
                    f"{name!r} already taken under {self.path_of(parent_id)}",
                    name=name,
                )

    def _reindex(self, parent_id: str):
        for pos, child in enumerate(self.children(parent_id)):
            child.index = pos

    def validate(self):
        """Raise InvalidTree naming the first violated invariant."""
        roots = [n for n in self.nodes.values() if n.parent is None]
        if len(roots) != 1 or roots[0].id != self.root_id or roots[0].is_pod:
            raise InvalidTree("exactly one root deck required", invariant="single-root")
        seen: set[str] = set()
        stack = [self.root_id]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise InvalidTree("cycle through " + nid, invariant="acyclic")
            seen.add(nid)
            node = self.nodes[nid]
            if node.flags.utility and node.flags.test:
                raise InvalidTree("utility+test on " + nid, invariant="mark-exclusive")
            if node.is_pod:
                continue
            kids = self.children(nid)
            if [k.index for k in kids] != list(range(len(kids))):
                raise InvalidTree("sparse indices under " + nid, invariant="dense-index")
            names: set[str] = set()
            for k in kids:
                label = k.name if k.is_deck else k.id
                if k.is_deck and (not k.name or "/" in k.name):
                    raise InvalidTree(f"bad deck name {k.name!r}", invariant="deck-name")
                if label in names:
                    raise InvalidTree(f"duplicate sibling name {label!r}", invariant="sibling-name")
                names.add(label)
                stack.append(k.id)
        if seen != set(self.nodes):
            raise InvalidTree("unreachable nodes present", invariant="connected")
        namespaces: set[str] = set()
        for n in self.nodes.values():
            if n.is_deck:
                ns = self.namespace_of(n.id)
                if ns in namespaces:
                    raise InvalidTree(f"namespace {ns!r} not unique", invariant="ns-injective")
                namespaces.add(ns)
