"""Namespace-keyed evaluator.

One `MiniKernel` owns a map of namespace name -> Module. Modules are created
lazily on first touch and live until reset. `eval_in_ns` splits a program
into leading statements plus an optional trailing expression: statements
mutate the module, the trailing expression produces the result value.

Imports copy the current binding value into the target module; they do not
alias. Closures remember their defining module, so a copied closure keeps
resolving its free names where it was defined, at call time.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .nodes import (
    BareExpr,
    BinOp,
    Call,
    Expr,
    FnStmt,
    IfExpr,
    IntLit,
    LetStmt,
    Program,
    StrLit,
    VarRef,
)
from .parser import PodlangSyntaxError, parse

StreamFn = Callable[[str, str], None]  # (channel, text)


class PodlangError(Exception):
    """Runtime failure inside evaluated code, as an (ename, evalue) pair."""

    def __init__(self, ename: str, evalue: str):
        super().__init__(f"{ename}: {evalue}")
        self.ename = ename
        self.evalue = evalue


@dataclass
class Module:
    ns: str
    bindings: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Closure:
    name: str
    params: tuple[str, ...]
    body: Expr
    module: Module  # defining module; free names resolve here at call time

    def __eq__(self, other):  # identity; closures are not comparable values
        return self is other

    def __hash__(self):
        return id(self)


Value = Union[int, str, Closure]


def render_value(value: Value) -> str:
    if isinstance(value, Closure):
        # arity only: the defining name is not part of the value (and any
        # name-rewriting transform of the program must not change output)
        return f"<fn/{len(value.params)}>"
    return str(value)


def code2parts(program: Program) -> tuple[tuple, Optional[Expr]]:
    """Split leading statements from the optional trailing bare expression."""
    items = program.items
    if items and isinstance(items[-1], BareExpr):
        return items[:-1], items[-1].expr
    return items, None


def defined_names(code: str) -> list[str]:
    """Top-level names a program binds, in order, deduplicated."""
    program = parse(code)
    seen: list[str] = []
    for item in program.items:
        if isinstance(item, (LetStmt, FnStmt)) and item.name not in seen:
            seen.append(item.name)
    return seen


def free_names(code: str) -> set[str]:
    """Names referenced but not bound by the program itself.

    Function parameters are bound inside their body; every top-level let/fn
    name is treated as bound for the whole program since it lands in the
    module either way. `print` is a builtin, never free.
    """
    program = parse(code)
    bound = {item.name for item in program.items if isinstance(item, (LetStmt, FnStmt))}
    refs: set[str] = set()

    def walk(expr: Expr, local: frozenset[str]):
        if isinstance(expr, VarRef):
            if expr.name not in local:
                refs.add(expr.name)
        elif isinstance(expr, BinOp):
            walk(expr.left, local)
            walk(expr.right, local)
        elif isinstance(expr, Call):
            if expr.callee not in local:
                refs.add(expr.callee)
            for a in expr.args:
                walk(a, local)
        elif isinstance(expr, IfExpr):
            walk(expr.cond, local)
            walk(expr.then, local)
            walk(expr.other, local)

    for item in program.items:
        if isinstance(item, LetStmt):
            walk(item.expr, frozenset())
        elif isinstance(item, FnStmt):
            walk(item.body, frozenset(item.params))
        elif isinstance(item, BareExpr):
            walk(item.expr, frozenset())
    return refs - bound - {"print"}


class MiniKernel:
    """In-process evaluator; also the engine behind the stdio kernel."""

    def __init__(self, recursion_limit: int = 512):
        self.nsmap: dict[str, Module] = {}
        self.recursion_limit = recursion_limit
        self.stream: Optional[StreamFn] = None
        self._depth = 0
        # each language-level call costs a handful of interpreter frames;
        # keep the host limit high enough that our own counter fires first
        want = recursion_limit * 10 + 1000
        if sys.getrecursionlimit() < want:
            sys.setrecursionlimit(want)

    # -- kernel ops -------------------------------------------------------

    def get_module(self, ns: str) -> Module:
        mod = self.nsmap.get(ns)
        if mod is None:
            mod = Module(ns)
            self.nsmap[ns] = mod
        return mod

    def eval_in_ns(self, ns: str, code: str, stream: Optional[StreamFn] = None) -> Optional[Value]:
        mod = self.get_module(ns)
        prev_stream = self.stream
        if stream is not None:
            self.stream = stream
        try:
            try:
                program = parse(code)
            except PodlangSyntaxError as exc:
                raise PodlangError("SyntaxError", exc.message) from None
            stmts, trailing = code2parts(program)
            for item in stmts:
                self._exec(item, mod)
            if trailing is not None:
                return self._eval(trailing, mod, None)
            return None
        except RecursionError:
            # deep non-call nesting can exhaust the host stack before the
            # call-depth counter trips; same error class either way
            raise PodlangError("RecursionLimit", "evaluation stack exhausted") from None
        finally:
            self.stream = prev_stream

    def add_import(self, from_ns: str, to_ns: str, name: str):
        src = self.get_module(from_ns)
        if name not in src.bindings:
            raise PodlangError("UndefinedName", f"{name!r} is not defined in {from_ns}")
        self.get_module(to_ns).bindings[name] = src.bindings[name]

    def delete_import(self, ns: str, name: str):
        mod = self.get_module(ns)
        if name not in mod.bindings:
            raise PodlangError("UndefinedName", f"{name!r} is not defined in {ns}")
        del mod.bindings[name]

    def delete_names(self, ns: str, names: list[str]) -> list[str]:
        """Batch removal; silently skips absent names, returns what went."""
        mod = self.get_module(ns)
        gone = []
        for name in names:
            if name in mod.bindings:
                del mod.bindings[name]
                gone.append(name)
        return gone

    def reset(self):
        self.nsmap.clear()
        self._depth = 0

    # -- evaluation -------------------------------------------------------

    def _exec(self, item, mod: Module):
        if isinstance(item, LetStmt):
            mod.bindings[item.name] = self._eval(item.expr, mod, None)
        elif isinstance(item, FnStmt):
            mod.bindings[item.name] = Closure(item.name, item.params, item.body, mod)
        else:  # BareExpr mid-program is rejected by the parser
            raise PodlangError("SyntaxError", "statement expected")

    def _lookup(self, name: str, mod: Module, local: Optional[dict]) -> Value:
        if local is not None and name in local:
            return local[name]
        if name in mod.bindings:
            return mod.bindings[name]
        raise PodlangError("UndefinedName", f"{name!r} is not defined in {mod.ns}")

    def _eval(self, expr: Expr, mod: Module, local: Optional[dict]) -> Value:
        if isinstance(expr, IntLit):
            return expr.value
        if isinstance(expr, StrLit):
            return expr.value
        if isinstance(expr, VarRef):
            return self._lookup(expr.name, mod, local)
        if isinstance(expr, BinOp):
            return self._binop(expr, mod, local)
        if isinstance(expr, IfExpr):
            cond = self._eval(expr.cond, mod, local)
            if not isinstance(cond, int):
                raise PodlangError("TypeMismatch", "if condition must be an integer")
            return self._eval(expr.then if cond != 0 else expr.other, mod, local)
        if isinstance(expr, Call):
            return self._call(expr, mod, local)
        raise PodlangError("TypeMismatch", f"cannot evaluate {type(expr).__name__}")

    def _binop(self, expr: BinOp, mod: Module, local: Optional[dict]) -> Value:
        lhs = self._eval(expr.left, mod, local)
        rhs = self._eval(expr.right, mod, local)
        op = expr.op
        if isinstance(lhs, int) and isinstance(rhs, int):
            if op == "+":
                return lhs + rhs
            if op == "-":
                return lhs - rhs
            if op == "*":
                return lhs * rhs
            if op == "/":
                if rhs == 0:
                    raise PodlangError("DivideByZero", "division by zero")
                return lhs // rhs
            if op == "<":
                return 1 if lhs < rhs else 0
            if op == "==":
                return 1 if lhs == rhs else 0
        if isinstance(lhs, str) and isinstance(rhs, str):
            if op == "+":
                return lhs + rhs
            if op == "==":
                return 1 if lhs == rhs else 0
        raise PodlangError(
            "TypeMismatch",
            f"operator {op!r} not defined for {type(lhs).__name__}/{type(rhs).__name__}",
        )

    def _call(self, expr: Call, mod: Module, local: Optional[dict]) -> Value:
        if expr.callee == "print" and (local is None or "print" not in local) and "print" not in mod.bindings:
            if len(expr.args) != 1:
                raise PodlangError("ArityMismatch", "print takes exactly one argument")
            value = self._eval(expr.args[0], mod, local)
            if self.stream is not None:
                self.stream("stdout", render_value(value) + "\n")
            return value
        fn = self._lookup(expr.callee, mod, local)
        if not isinstance(fn, Closure):
            raise PodlangError("TypeMismatch", f"{expr.callee!r} is not callable")
        if len(expr.args) != len(fn.params):
            raise PodlangError(
                "ArityMismatch",
                f"{fn.name} expects {len(fn.params)} argument(s), got {len(expr.args)}",
            )
        args = [self._eval(a, mod, local) for a in expr.args]
        if self._depth >= self.recursion_limit:
            raise PodlangError("RecursionLimit", f"call depth exceeded {self.recursion_limit}")
        self._depth += 1
        try:
            # free names in the body resolve through the DEFINING module
            return self._eval(fn.body, fn.module, dict(zip(fn.params, args)))
        finally:
            self._depth -= 1
