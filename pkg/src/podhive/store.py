"""Persistence: canonical repo document, file-hierarchy export for version
control, pod-level diff reconstruction, and the linearized fallback export.

The document format is a flat node list in depth-first sibling order inside
canonical JSON (sorted keys, no extra whitespace), so identical trees always
produce identical bytes. The file export mirrors the deck hierarchy with
index-prefixed names, which keeps sibling order visible in plain git diffs.
Pod files hold exactly the code bytes; everything else (flags, reexports,
fold state) lives in the owning deck's _deck.json.

Git itself is never reimplemented here: callers shell out to their git and
hand the unified diff text to `pod_diff`.
"""
from __future__ import annotations

import json
import os
import re
import shutil
from dataclasses import dataclass, field
from typing import Optional

from .errors import (
    FormatVersionMismatch,
    InvalidTree,
    IoFailure,
    NameClash,
    RepoLocked,
    UnparseableDiff,
    UnsupportedKernel,
)
from .model import Flags, Node, NodeKind, Tree

FORMAT_VERSION = 1
DOCUMENT_NAME = "repo.codepod.json"
LOCK_NAME = "repo.lock"
MANIFEST_NAME = "_manifest.json"
DECK_META_NAME = "_deck.json"


def _canonical(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


# -- document -----------------------------------------------------------------


def save(tree: Tree, *, kernel_language: str = "podlang") -> bytes:
    """Serialize to canonical document bytes. Same tree, same bytes."""
    tree.validate()
    return _canonical(
        {
            "format_version": FORMAT_VERSION,
            "kernel_language": kernel_language,
            "nodes": [n.to_dict() for n in tree.walk()],
        }
    )


def load(data: bytes) -> Tree:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidTree(f"not a repo document: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise InvalidTree("document must be an object with a node list")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"format_version {version!r}, supported {FORMAT_VERSION}", found=version
        )
    tree = Tree()
    for raw in doc["nodes"]:
        if not isinstance(raw, dict):
            raise InvalidTree("node records must be objects")
        try:
            node = Node.from_dict(raw)
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidTree(f"bad node record: {exc}") from None
        if node.id in tree.nodes:
            raise InvalidTree(f"duplicate node id {node.id}", invariant="unique-id")
        tree.nodes[node.id] = node
        if node.parent is None:
            tree.root_id = node.id
    for node in tree.nodes.values():
        if node.parent is not None:
            parent = tree.nodes.get(node.parent)
            if parent is None:
                raise InvalidTree(f"node {node.id} parents unknown {node.parent}", invariant="connected")
            if parent.is_pod:
                raise InvalidTree(f"pod {parent.id} cannot parent {node.id}", invariant="deck-parent")
    tree.validate()
    return tree


def kernel_language_of(data: bytes) -> str:
    try:
        doc = json.loads(data.decode("utf-8"))
        return str(doc.get("kernel_language", "podlang"))
    except Exception:
        return "podlang"


def save_repo(tree: Tree, directory: str, *, kernel_language: str = "podlang") -> str:
    """Write the document into a repo directory, honoring the writer lock."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"creating {directory}: {exc}") from None
    path = os.path.join(directory, DOCUMENT_NAME)
    with repo_lock(directory):
        data = save(tree, kernel_language=kernel_language)
        tmp = path + ".tmp"
        try:
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(f"writing {path}: {exc}") from None
    return path


def load_repo(directory: str) -> Tree:
    path = os.path.join(directory, DOCUMENT_NAME)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"reading {path}: {exc}") from None
    return load(data)


# -- writer lock ---------------------------------------------------------------


class repo_lock:
    """Exclusive-writer lock on a repo directory. Readers never take it."""

    def __init__(self, directory: str):
        self.path = os.path.join(directory, LOCK_NAME)
        self._fd: Optional[int] = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RepoLocked(f"{self.path} held by another writer", path=self.path) from None
        except OSError as exc:
            raise IoFailure(f"creating {self.path}: {exc}") from None
        os.write(self._fd, str(os.getpid()).encode("ascii"))
        return self

    def __exit__(self, *exc_info):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        try:
            os.unlink(self.path)
        except OSError:
            pass
        return False


# -- file export -----------------------------------------------------------------


@dataclass
class Manifest:
    """NodeId <-> relative path, persisted inside the export directory."""

    by_id: dict[str, str] = field(default_factory=dict)

    @property
    def by_path(self) -> dict[str, str]:
        return {p: i for i, p in self.by_id.items()}

    def to_bytes(self) -> bytes:
        return _canonical({"format_version": FORMAT_VERSION, "paths": dict(sorted(self.by_id.items()))})

    @classmethod
    def from_bytes(cls, data: bytes) -> "Manifest":
        doc = json.loads(data.decode("utf-8"))
        return cls(by_id=dict(doc["paths"]))

    @classmethod
    def read(cls, directory: str) -> "Manifest":
        path = os.path.join(directory, MANIFEST_NAME)
        try:
            with open(path, "rb") as fh:
                return cls.from_bytes(fh.read())
        except (OSError, json.JSONDecodeError, UnicodeDecodeError, KeyError) as exc:
            raise IoFailure(f"reading {path}: {exc}") from None


_SANITIZE_RE = re.compile(r"[^A-Za-z0-9]")


def _sanitize(name: str, used: set[str]) -> str:
    base = _SANITIZE_RE.sub("_", name) or "_"
    candidate = base
    n = 1
    while candidate in used:
        n += 1
        candidate = f"{base}_{n}"
    used.add(candidate)
    return candidate


def _deck_meta(tree: Tree, deck: Node) -> bytes:
    pods = {}
    for pod in tree.child_pods(deck.id):
        meta = {}
        flags = pod.flags.to_dict()
        if any(flags.values()):
            meta["flags"] = flags
        if pod.folded:
            meta["folded"] = True
        if meta:
            pods[pod.id] = meta
    doc = {
        "flags": deck.flags.to_dict(),
        "folded": deck.folded,
        "id": deck.id,
        "name": deck.name,
        "pods": pods,
        "reexports": list(deck.reexports),
    }
    return _canonical(doc)


def export_files(tree: Tree, directory: str) -> Manifest:
    """Mirror the tree into a directory: decks become index-prefixed
    directories, pods become .pod files holding exactly the code bytes.

    The directory must be empty, new, or previously managed (it contains a
    manifest); managed content is replaced wholesale. Entries starting with
    a dot (like .git) and the lock file are left alone.
    """
    tree.validate()
    try:
        os.makedirs(directory, exist_ok=True)
        existing = [e for e in os.listdir(directory) if not e.startswith(".") and e != LOCK_NAME]
    except OSError as exc:
        raise IoFailure(f"preparing {directory}: {exc}") from None
    if existing and MANIFEST_NAME not in existing:
        raise IoFailure(f"{directory} is neither empty nor managed")
    for entry in existing:
        full = os.path.join(directory, entry)
        try:
            if os.path.isdir(full):
                shutil.rmtree(full)
            else:
                os.unlink(full)
        except OSError as exc:
            raise IoFailure(f"clearing {full}: {exc}") from None

    manifest = Manifest()

    def write(path: str, data: bytes):
        try:
            with open(path, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            raise IoFailure(f"writing {path}: {exc}") from None

    def emit_deck(deck: Node, dir_path: str, rel: str):
        manifest.by_id[deck.id] = rel or "."
        write(os.path.join(dir_path, DECK_META_NAME), _deck_meta(tree, deck))
        used: set[str] = set()
        for child in tree.children(deck.id):
            if child.is_deck:
                leaf = f"{child.index}-{_sanitize(child.name or child.id, used)}"
                child_dir = os.path.join(dir_path, leaf)
                if os.path.exists(child_dir):
                    raise NameClash(f"{child_dir} already exists", path=child_dir)
                try:
                    os.mkdir(child_dir)
                except OSError as exc:
                    raise IoFailure(f"creating {child_dir}: {exc}") from None
                emit_deck(child, child_dir, f"{rel}/{leaf}" if rel else leaf)
            else:
                leaf = f"{child.index}-{child.id}.pod"
                pod_path = os.path.join(dir_path, leaf)
                if os.path.exists(pod_path):
                    raise NameClash(f"{pod_path} already exists", path=pod_path)
                manifest.by_id[child.id] = f"{rel}/{leaf}" if rel else leaf
                write(pod_path, child.code.encode("utf-8"))

    emit_deck(tree.root, directory, "")
    write(os.path.join(directory, MANIFEST_NAME), manifest.to_bytes())
    return manifest


_POD_FILE_RE = re.compile(r"^(\d+)-(.+)\.pod$")
_DECK_DIR_RE = re.compile(r"^(\d+)-(.+)$")


def import_files(directory: str) -> Tree:
    """Rebuild a tree from an export directory. Exact inverse of
    export_files for anything export_files wrote."""
    if not os.path.isfile(os.path.join(directory, DECK_META_NAME)):
        raise IoFailure(f"{directory} has no {DECK_META_NAME}")
    tree = Tree()

    def read_json(path: str) -> dict:
        try:
            with open(path, "rb") as fh:
                return json.loads(fh.read().decode("utf-8"))
        except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise IoFailure(f"reading {path}: {exc}") from None

    def build_deck(dir_path: str, parent: Optional[str], index: int):
        meta = read_json(os.path.join(dir_path, DECK_META_NAME))
        pod_meta = meta.get("pods") or {}
        deck = Node(
            id=meta["id"],
            kind=NodeKind.DECK,
            parent=parent,
            index=index,
            name=meta.get("name"),
            flags=Flags.from_dict(meta.get("flags") or {}),
            folded=bool(meta.get("folded", False)),
            reexports=list(meta.get("reexports") or []),
        )
        tree.nodes[deck.id] = deck
        if parent is None:
            tree.root_id = deck.id
        try:
            entries = sorted(os.listdir(dir_path))
        except OSError as exc:
            raise IoFailure(f"listing {dir_path}: {exc}") from None
        for entry in entries:
            if entry in (DECK_META_NAME, MANIFEST_NAME, LOCK_NAME) or entry.startswith("."):
                continue
            full = os.path.join(dir_path, entry)
            if os.path.isdir(full):
                m = _DECK_DIR_RE.match(entry)
                if m:
                    build_deck(full, deck.id, int(m.group(1)))
                continue
            m = _POD_FILE_RE.match(entry)
            if not m:
                continue
            try:
                with open(full, "rb") as fh:
                    code = fh.read().decode("utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                raise IoFailure(f"reading {full}: {exc}") from None
            pod = Node(
                id=m.group(2),
                kind=NodeKind.POD,
                parent=deck.id,
                index=int(m.group(1)),
                code=code,
            )
            extra = pod_meta.get(pod.id) or {}
            pod.flags = Flags.from_dict(extra.get("flags") or {})
            pod.folded = bool(extra.get("folded", False))
            tree.nodes[pod.id] = pod

    build_deck(directory, None, 0)
    tree.validate()
    return tree


# -- pod-level diff ---------------------------------------------------------------


@dataclass(frozen=True)
class Hunk:
    old_range: tuple[int, int]
    new_range: tuple[int, int]
    lines: tuple[str, ...]


@dataclass(frozen=True)
class PodDiff:
    pod: str
    change: str  # Added | Deleted | Modified
    hunks: tuple[Hunk, ...] = ()


@dataclass
class DiffReport:
    """pod_diff result: per-pod changes plus whatever else the diff touched."""

    pods: list[PodDiff] = field(default_factory=list)
    metadata_paths: list[str] = field(default_factory=list)
    unknown_paths: list[str] = field(default_factory=list)


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def _strip_git_prefix(path: str) -> str:
    return path[2:] if path.startswith(("a/", "b/")) else path


def pod_diff(manifest: Manifest, diff_text: str) -> DiffReport:
    """Map a unified diff over an export directory back onto pods.

    Paths resolve through the manifest; an added .pod file not yet in the
    manifest gets its id from the file name itself. Hunks are kept only for
    modifications, since Added and Deleted already say everything.
    """
    report = DiffReport()
    by_path = manifest.by_path
    lines = diff_text.splitlines()
    i = 0
    current: Optional[dict] = None

    def flush():
        nonlocal current
        if current is None:
            return
        path, change, hunks = current["path"], current["change"], current["hunks"]
        base = path.rsplit("/", 1)[-1]
        if base in (DECK_META_NAME, MANIFEST_NAME):
            report.metadata_paths.append(path)
        elif base.endswith(".pod"):
            pod_id = by_path.get(path)
            if pod_id is None:
                m = _POD_FILE_RE.match(base)
                pod_id = m.group(2) if m else None
            if pod_id is None:
                report.unknown_paths.append(path)
            else:
                report.pods.append(
                    PodDiff(pod=pod_id, change=change, hunks=tuple(hunks) if change == "Modified" else ())
                )
        else:
            report.unknown_paths.append(path)
        current = None

    while i < len(lines):
        line = lines[i]
        if line.startswith("diff --git "):
            flush()
            parts = line.split()
            if len(parts) < 4:
                raise UnparseableDiff(f"bad header: {line!r}", line=i + 1)
            current = {"path": _strip_git_prefix(parts[3]), "change": "Modified", "hunks": []}
        elif line.startswith("new file"):
            if current is None:
                raise UnparseableDiff(f"stray {line!r}", line=i + 1)
            current["change"] = "Added"
        elif line.startswith("deleted file"):
            if current is None:
                raise UnparseableDiff(f"stray {line!r}", line=i + 1)
            current["change"] = "Deleted"
        elif line.startswith("+++ "):
            if current is None:
                raise UnparseableDiff(f"stray {line!r}", line=i + 1)
            target = _strip_git_prefix(line[4:].strip())
            if target != "/dev/null":
                current["path"] = target
        elif line.startswith("--- "):
            if current is None:
                raise UnparseableDiff(f"stray {line!r}", line=i + 1)
        elif line.startswith("@@"):
            if current is None:
                raise UnparseableDiff("hunk outside a file section", line=i + 1)
            m = _HUNK_RE.match(line)
            if not m:
                raise UnparseableDiff(f"bad hunk header: {line!r}", line=i + 1)
            old = (int(m.group(1)), int(m.group(2) or "1"))
            new = (int(m.group(3)), int(m.group(4) or "1"))
            body: list[str] = []
            need_old, need_new = old[1], new[1]
            i += 1
            while i < len(lines) and (need_old > 0 or need_new > 0):
                body_line = lines[i]
                if body_line.startswith("\\"):
                    body.append(body_line)
                    i += 1
                    continue
                if not body_line or body_line[0] not in " +-":
                    raise UnparseableDiff(f"bad hunk line: {body_line!r}", line=i + 1)
                if body_line[0] in " -":
                    need_old -= 1
                if body_line[0] in " +":
                    need_new -= 1
                body.append(body_line)
                i += 1
            if need_old != 0 or need_new != 0:
                raise UnparseableDiff("hunk shorter than its header claims", line=i)
            current["hunks"].append(Hunk(old, new, tuple(body)))
            continue
        i += 1
    flush()
    return report


# -- linearized fallback ------------------------------------------------------------


def export_linearized(tree: Tree, *, kernel_language: str = "podlang") -> str:
    """One batch-runnable program equivalent to an interactive full run.

    Only the bundled language has a single-file linearizer; other kernels
    export per-namespace files through export_files instead.
    """
    if kernel_language != "podlang":
        raise UnsupportedKernel(f"no single-file linearizer for {kernel_language!r}")
    from .flatten import linearize

    return linearize(tree).program_text
