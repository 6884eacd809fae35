"""Evaluation kernel over real host modules.

One types.ModuleType per namespace, identity-stable for the kernel's
lifetime. Code splits into leading statements and an optional trailing
expression: statements exec for effect in the module, the expression's
value is the result. Imports copy one binding between module dicts, so a
copied function still resolves its free names through the defining module's
globals at call time.
"""

from __future__ import annotations

import ast
import types
from contextlib import redirect_stderr, redirect_stdout
from typing import Callable, Optional

StreamFn = Callable[[str, str], None]


class HostError(Exception):
    """Host exception surfaced as an error reply: ename is the exception
    class name, evalue its message."""

    def __init__(self, ename: str, evalue: str):
        super().__init__(f"{ename}: {evalue}")
        self.ename = ename
        self.evalue = evalue


class _ChannelWriter:
    """File-like that forwards every write as one stream chunk."""

    def __init__(self, channel: str, emit: StreamFn):
        self.channel = channel
        self.emit = emit

    def write(self, text: str) -> int:
        if text:
            self.emit(self.channel, text)
        return len(text)

    def flush(self):
        pass


def render(value) -> Optional[str]:
    """Wire text for a result value; None means no result, like a REPL
    staying silent on a None expression."""
    return None if value is None else repr(value)


class HostKernel:
    def __init__(self):
        self._modules: dict[str, types.ModuleType] = {}

    def get_module(self, ns: str) -> types.ModuleType:
        mod = self._modules.get(ns)
        if mod is None:
            mod = types.ModuleType(ns)
            # back-reference so code and tests can reach sibling modules
            mod.__getmod__ = self.get_module
            self._modules[ns] = mod
        return mod

    def eval_in_ns(self, ns: str, code: str, stream: Optional[StreamFn] = None):
        mod = self.get_module(ns)
        emit = stream or (lambda channel, text: None)
        try:
            parsed = ast.parse(code)
        except SyntaxError as exc:
            raise HostError("SyntaxError", str(exc)) from None
        body = parsed.body
        trailing = None
        if body and isinstance(body[-1], ast.Expr):
            trailing = ast.Expression(body[-1].value)
            body = body[:-1]
        out = _ChannelWriter("stdout", emit)
        err = _ChannelWriter("stderr", emit)
        try:
            with redirect_stdout(out), redirect_stderr(err):
                if body:
                    stmts = ast.Module(body=body, type_ignores=[])
                    exec(compile(stmts, f"<{ns}>", "exec"), mod.__dict__)
                if trailing is not None:
                    return eval(compile(trailing, f"<{ns}>", "eval"), mod.__dict__)
                return None
        except Exception as exc:
            raise HostError(type(exc).__name__, str(exc)) from None

    def add_import(self, from_ns: str, to_ns: str, name: str):
        src = self.get_module(from_ns)
        if name not in src.__dict__:
            raise HostError("NameError", f"name {name!r} is not defined in {from_ns}")
        self.get_module(to_ns).__dict__[name] = src.__dict__[name]

    def delete_import(self, ns: str, name: str):
        mod = self.get_module(ns)
        if name not in mod.__dict__:
            raise HostError("NameError", f"name {name!r} is not defined in {ns}")
        del mod.__dict__[name]

    def delete_names(self, ns: str, names: list[str]):
        mod = self.get_module(ns)
        for name in names:
            mod.__dict__.pop(name, None)

    def reset(self):
        self._modules.clear()
