"""A deliberately small expression language for pods.

Programs are a list of `let` / `fn` items, optionally ending in one bare
expression whose value is the pod's result. Evaluation happens inside named
module namespaces; function bodies resolve free names through their defining
module at call time, so cross-pod references bind late.
"""

from .nodes import (
    BareExpr,
    BinOp,
    Call,
    FnStmt,
    IfExpr,
    IntLit,
    LetStmt,
    Program,
    StrLit,
    VarRef,
)
from .parser import PodlangSyntaxError, parse
from .interp import (
    Closure,
    MiniKernel,
    Module,
    PodlangError,
    code2parts,
    defined_names,
    free_names,
    render_value,
)

__all__ = [
    "BareExpr",
    "BinOp",
    "Call",
    "Closure",
    "FnStmt",
    "IfExpr",
    "IntLit",
    "LetStmt",
    "MiniKernel",
    "Module",
    "PodlangError",
    "PodlangSyntaxError",
    "Program",
    "StrLit",
    "VarRef",
    "code2parts",
    "defined_names",
    "free_names",
    "parse",
    "render_value",
]
