"""Tokenizer and recursive-descent parser.

Grammar, loosely:

    program  := item*
    item     := "let" IDENT "=" expr ";"
              | "fn" IDENT "(" [IDENT {"," IDENT}] ")" "=" expr ";"
              | expr [";"]           # only allowed as the final item
    expr     := cmp
    cmp      := add {("<" | "==") add}
    add      := mul {("+" | "-") mul}
    mul      := atom {("*" | "/") atom}
    atom     := INT | STRING | IDENT | IDENT "(" [expr {"," expr}] ")"
              | "(" expr ")" | "if" expr "then" expr "else" expr

`#` starts a comment through end of line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

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

KEYWORDS = {"let", "fn", "if", "then", "else"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[\s]+|\#[^\n]*)
  | (?P<int>\d+)
  | (?P<str>"(?:\\.|[^"\\])*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|[+\-*/<=(),;])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


class PodlangSyntaxError(Exception):
    """Raised for any lexical or grammatical failure; .message is human text."""

    def __init__(self, message: str, pos: int = 0):
        super().__init__(message)
        self.message = message
        self.pos = pos


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(src: str) -> list[Token]:
    out: list[Token] = []
    i = 0
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if not m:
            raise PodlangSyntaxError(f"stray character {src[i]!r} at offset {i}", i)
        i = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        out.append(Token(kind, m.group(), m.start()))
    return out


def _unquote(raw: str, pos: int) -> str:
    body = raw[1:-1]
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            i += 1
            if i >= len(body) or body[i] not in _ESCAPES:
                raise PodlangSyntaxError(f"bad escape in string at offset {pos}", pos)
            out.append(_ESCAPES[body[i]])
        else:
            out.append(ch)
        i += 1
    return "".join(out)


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise PodlangSyntaxError("unexpected end of input", self.tokens[-1].pos if self.tokens else 0)
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text:
            raise PodlangSyntaxError(f"expected {text!r}, found {tok.text!r} at offset {tok.pos}", tok.pos)
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    # items ------------------------------------------------------------

    def program(self) -> Program:
        items: list = []
        while self.peek() is not None:
            tok = self.peek()
            if tok.kind == "ident" and tok.text == "let":
                items.append(self.let_item())
            elif tok.kind == "ident" and tok.text == "fn":
                items.append(self.fn_item())
            else:
                expr = self.expr()
                if self.at(";"):
                    self.next()
                if self.peek() is not None:
                    raise PodlangSyntaxError(
                        f"only the final item may be a bare expression (offset {tok.pos})",
                        tok.pos,
                    )
                items.append(BareExpr(expr))
        return Program(tuple(items))

    def let_item(self) -> LetStmt:
        self.expect("let")
        name = self.ident()
        self.expect("=")
        expr = self.expr()
        self.expect(";")
        return LetStmt(name, expr)

    def fn_item(self) -> FnStmt:
        self.expect("fn")
        name = self.ident()
        self.expect("(")
        params: list[str] = []
        if not self.at(")"):
            params.append(self.ident())
            while self.at(","):
                self.next()
                params.append(self.ident())
        self.expect(")")
        if len(set(params)) != len(params):
            raise PodlangSyntaxError(f"duplicate parameter in fn {name}", 0)
        self.expect("=")
        body = self.expr()
        self.expect(";")
        return FnStmt(name, tuple(params), body)

    def ident(self) -> str:
        tok = self.next()
        if tok.kind != "ident" or tok.text in KEYWORDS:
            raise PodlangSyntaxError(f"expected a name, found {tok.text!r} at offset {tok.pos}", tok.pos)
        return tok.text

    # expressions --------------------------------------------------------

    def expr(self) -> Expr:
        return self.cmp()

    def cmp(self) -> Expr:
        left = self.add()
        while self.peek() is not None and self.peek().text in ("<", "=="):
            op = self.next().text
            left = BinOp(op, left, self.add())
        return left

    def add(self) -> Expr:
        left = self.mul()
        while self.peek() is not None and self.peek().text in ("+", "-"):
            op = self.next().text
            left = BinOp(op, left, self.mul())
        return left

    def mul(self) -> Expr:
        left = self.atom()
        while self.peek() is not None and self.peek().text in ("*", "/"):
            op = self.next().text
            left = BinOp(op, left, self.atom())
        return left

    def atom(self) -> Expr:
        tok = self.next()
        if tok.kind == "int":
            return IntLit(int(tok.text))
        if tok.kind == "str":
            return StrLit(_unquote(tok.text, tok.pos))
        if tok.text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        if tok.kind == "ident":
            if tok.text == "if":
                cond = self.expr()
                self.expect("then")
                then = self.expr()
                self.expect("else")
                other = self.expr()
                return IfExpr(cond, then, other)
            if tok.text in KEYWORDS:
                raise PodlangSyntaxError(f"misplaced keyword {tok.text!r} at offset {tok.pos}", tok.pos)
            if self.at("("):
                self.next()
                args: list[Expr] = []
                if not self.at(")"):
                    args.append(self.expr())
                    while self.at(","):
                        self.next()
                        args.append(self.expr())
                self.expect(")")
                return Call(tok.text, tuple(args))
            return VarRef(tok.text)
        raise PodlangSyntaxError(f"unexpected {tok.text!r} at offset {tok.pos}", tok.pos)


def parse(src: str) -> Program:
    return _Parser(tokenize(src)).program()
