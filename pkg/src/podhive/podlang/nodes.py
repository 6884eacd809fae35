"""AST node definitions. All frozen; the parser is the only producer."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class IntLit(Expr):
    value: int


@dataclass(frozen=True)
class StrLit(Expr):
    value: str


@dataclass(frozen=True)
class VarRef(Expr):
    name: str


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / < ==
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    callee: str
    args: tuple[Expr, ...]


@dataclass(frozen=True)
class IfExpr(Expr):
    cond: Expr
    then: Expr
    other: Expr


@dataclass(frozen=True)
class Item:
    pass


@dataclass(frozen=True)
class LetStmt(Item):
    name: str
    expr: Expr


@dataclass(frozen=True)
class FnStmt(Item):
    name: str
    params: tuple[str, ...]
    body: Expr


@dataclass(frozen=True)
class BareExpr(Item):
    expr: Expr


@dataclass(frozen=True)
class Program:
    items: tuple[Item, ...]
