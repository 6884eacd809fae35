"""Linearizer: collapse a whole tree into one namespace.

Every defined name is mangled to an ns-qualified form (`n<k>_<name>` where
k indexes the namespace), and every reference is rewritten to the mangled
name of whatever the static resolver says it binds to. References the
resolver cannot see become a reserved undefined spelling so they fail with
the same error class at the same spot.

Two consumers:
  * the repo store's linearized export (single runnable program), and
  * `oracle_eval_flat`, the independent result oracle the interactive
    runtime is tested against. The oracle never touches the orchestrator:
    it evaluates the rewritten chunks in one module, in schedule order,
    continuing past failed chunks the way a full tree run continues past
    failed pods.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import ParseFailure
from .model import Node, Tree
from .names import (
    DEFAULT_EXTRACTOR,
    NameExtractor,
    NameSet,
    execution_schedule,
    visible_set,
)
from .podlang import (
    BareExpr,
    BinOp,
    Call,
    FnStmt,
    IfExpr,
    IntLit,
    LetStmt,
    MiniKernel,
    PodlangError,
    PodlangSyntaxError,
    StrLit,
    VarRef,
    parse,
    render_value,
)

FLAT_NS = "/flat"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")


def _to_source(expr, mangle) -> str:
    if isinstance(expr, IntLit):
        return str(expr.value)
    if isinstance(expr, StrLit):
        return '"' + _escape(expr.value) + '"'
    if isinstance(expr, VarRef):
        return mangle(expr.name)
    if isinstance(expr, BinOp):
        return f"({_to_source(expr.left, mangle)} {expr.op} {_to_source(expr.right, mangle)})"
    if isinstance(expr, IfExpr):
        return (
            f"(if {_to_source(expr.cond, mangle)} "
            f"then {_to_source(expr.then, mangle)} "
            f"else {_to_source(expr.other, mangle)})"
        )
    if isinstance(expr, Call):
        args = ", ".join(_to_source(a, mangle) for a in expr.args)
        return f"{mangle.for_call(expr.callee)}({args})"
    raise ParseFailure(f"unknown expression node {type(expr).__name__}")


class _Mangler:
    """Rewrites one pod's names given its namespace context."""

    def __init__(self, ns_index: dict[str, int], own_ns: str, vis: Optional[NameSet], local: frozenset):
        self.ns_index = ns_index
        self.own_ns = own_ns
        self.vis = vis
        self.local = local

    def sub(self, local: frozenset) -> "_Mangler":
        return _Mangler(self.ns_index, self.own_ns, self.vis, local)

    def qualified(self, ns: str, name: str) -> str:
        return f"n{self.ns_index[ns]}_{name}"

    def __call__(self, name: str) -> str:
        if name in self.local:
            return name
        res = self.vis.resolutions.get(name) if self.vis is not None else None
        if res is not None:
            return self.qualified(res.source_ns, name)
        return "u_" + name  # reserved spelling, never defined

    def for_call(self, name: str) -> str:
        if name in self.local:
            return name
        res = self.vis.resolutions.get(name) if self.vis is not None else None
        if res is not None:
            return self.qualified(res.source_ns, name)
        if name == "print":
            return "print"  # builtin unless something visible shadows it
        return "u_" + name


@dataclass
class Chunk:
    pod_id: str
    ns: str
    code: str


@dataclass
class Linearized:
    chunks: list[Chunk]
    ns_index: dict[str, int]

    @property
    def program_text(self) -> str:
        parts = []
        for chunk in self.chunks:
            parts.append(f"# pod {chunk.pod_id} ns {chunk.ns}")
            parts.append(chunk.code.rstrip("\n"))
        return "\n".join(parts) + "\n"


def _namespace_index(tree: Tree) -> dict[str, int]:
    index: dict[str, int] = {}
    for node in tree.walk():
        if node.is_pod and not (node.flags.test or node.flags.utility):
            continue
        ns = tree.namespace_of(node.id)
        if ns not in index:
            index[ns] = len(index)
    return index


def _rewrite_pod(tree: Tree, pod: Node, ns_index: dict[str, int], ext: NameExtractor) -> str:
    ns = tree.namespace_of(pod.id)
    owner = tree.owner_of_namespace(pod.id)
    vis = visible_set(tree, owner.id, ext, strict=False)
    program = parse(pod.code)
    base = _Mangler(ns_index, ns, vis, frozenset())
    lines: list[str] = []
    for item in program.items:
        if isinstance(item, LetStmt):
            lines.append(f"let {base.qualified(ns, item.name)} = {_to_source(item.expr, base)};")
        elif isinstance(item, FnStmt):
            inner = base.sub(frozenset(item.params))
            params = ", ".join(item.params)
            lines.append(
                f"fn {base.qualified(ns, item.name)}({params}) = {_to_source(item.body, inner)};"
            )
        elif isinstance(item, BareExpr):
            lines.append(_to_source(item.expr, base))
    return "\n".join(lines)


def linearize(tree: Tree, ext: NameExtractor = DEFAULT_EXTRACTOR, start: Optional[str] = None) -> Linearized:
    ns_index = _namespace_index(tree)
    chunks: list[Chunk] = []
    for kind, node_id in execution_schedule(tree, start):
        if kind != "eval":
            continue
        pod = tree.node(node_id)
        ns = tree.namespace_of(pod.id)
        try:
            code = _rewrite_pod(tree, pod, ns_index, ext)
        except PodlangSyntaxError as exc:
            # keep the broken pod in place; it must fail at the same slot
            code = pod.code
        chunks.append(Chunk(pod.id, ns, code))
    return Linearized(chunks, ns_index)


@dataclass(frozen=True)
class Outcome:
    """Value-or-error result of one evaluation, comparable across systems."""

    value: Optional[str] = None
    ename: Optional[str] = None

    @classmethod
    def ok(cls, value) -> "Outcome":
        return cls(value=None if value is None else render_value(value))

    @classmethod
    def err(cls, ename: str) -> "Outcome":
        return cls(ename=ename)


def oracle_run(
    tree: Tree,
    probes: list[tuple[str, str]],
    ext: NameExtractor = DEFAULT_EXTRACTOR,
) -> tuple[dict[str, Outcome], list[Outcome]]:
    """Evaluate the whole tree in one flat namespace, then each probe.

    Returns (per-pod outcomes keyed by pod id, probe outcomes). `probes` are
    (node_id, expression) pairs: the expression is rewritten as if it were
    code sitting in that node's namespace.
    """
    lin = linearize(tree, ext)
    kernel = MiniKernel()
    pods: dict[str, Outcome] = {}
    for chunk in lin.chunks:
        try:
            pods[chunk.pod_id] = Outcome.ok(kernel.eval_in_ns(FLAT_NS, chunk.code))
        except PodlangError as exc:
            pods[chunk.pod_id] = Outcome.err(exc.ename)  # run continues past it
    results: list[Outcome] = []
    for node_id, expr_text in probes:
        owner = tree.owner_of_namespace(node_id)
        vis = visible_set(tree, owner.id, ext, strict=False)
        mangler = _Mangler(lin.ns_index, tree.namespace_of(owner.id), vis, frozenset())
        try:
            program = parse(expr_text)
            rewritten_parts = []
            for item in program.items:
                if not isinstance(item, BareExpr):
                    raise PodlangSyntaxError("probes must be bare expressions")
                rewritten_parts.append(_to_source(item.expr, mangler))
            value = kernel.eval_in_ns(FLAT_NS, rewritten_parts[-1])
            results.append(Outcome.ok(value))
        except PodlangSyntaxError:
            results.append(Outcome.err("SyntaxError"))
        except PodlangError as exc:
            results.append(Outcome.err(exc.ename))
    return pods, results


def oracle_eval_flat(
    tree: Tree,
    probes: list[tuple[str, str]],
    ext: NameExtractor = DEFAULT_EXTRACTOR,
) -> list[Outcome]:
    """Probe outcomes only; see oracle_run."""
    return oracle_run(tree, probes, ext)[1]
