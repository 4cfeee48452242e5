"""Small, safe arithmetic/boolean expression language.

Used for symbolic weights in model templates and for guards, actions and
query predicates in automata networks. Expressions are parsed with :mod:`ast`
and restricted to a whitelist of node types before being compiled once.
"""

from __future__ import annotations

import ast
from functools import lru_cache
from typing import Any, Callable, Mapping

__all__ = ["ExpressionError", "compile_expr", "compile_actions", "names_in", "evaluate"]


class ExpressionError(ValueError):
    pass


def _clamp(x, lo, hi):
    return min(max(x, lo), hi)


FUNCTIONS: dict[str, Callable[..., Any]] = {
    "min": min,
    "max": max,
    "abs": abs,
    "clamp": _clamp,
}

_ALLOWED = (
    ast.Expression,
    ast.BoolOp,
    ast.And,
    ast.Or,
    ast.BinOp,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.FloorDiv,
    ast.Mod,
    ast.Pow,
    ast.BitAnd,
    ast.BitOr,
    ast.BitXor,
    ast.LShift,
    ast.RShift,
    ast.UnaryOp,
    ast.UAdd,
    ast.USub,
    ast.Not,
    ast.Invert,
    ast.Compare,
    ast.Eq,
    ast.NotEq,
    ast.Lt,
    ast.LtE,
    ast.Gt,
    ast.GtE,
    ast.IfExp,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Call,
    ast.Attribute,
)


def _check(tree: ast.AST, source: str) -> None:
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ExpressionError(f"disallowed syntax {type(node).__name__} in {source!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError(f"unknown function in {source!r}")
            if node.keywords:
                raise ExpressionError(f"keyword arguments not supported in {source!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, bool)):
            raise ExpressionError(f"only numeric constants allowed in {source!r}")
        if isinstance(node, ast.Name) and node.id.startswith("__"):
            raise ExpressionError(f"illegal name {node.id!r}")
        if isinstance(node, ast.Attribute) and node.attr.startswith("_"):
            raise ExpressionError(f"illegal attribute {node.attr!r}")


@lru_cache(maxsize=4096)
def _parse(source: str) -> tuple[Any, frozenset[str]]:
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
    _check(tree, source)
    names = frozenset(
        n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and n.id not in FUNCTIONS
    )
    return compile(tree, f"<expr {source}>", "eval"), names


def names_in(source: str) -> frozenset[str]:
    """Free variable names referenced by an expression (function names excluded)."""
    return _parse(source)[1]


def compile_expr(source: str) -> Callable[[Mapping[str, Any]], Any]:
    code, _ = _parse(source)
    globs = {"__builtins__": {}, **FUNCTIONS}

    def run(env: Mapping[str, Any]) -> Any:
        try:
            return eval(code, globs, env)
        except NameError as exc:
            raise ExpressionError(f"{exc} in {source!r}") from None
        except ZeroDivisionError:
            raise ExpressionError(f"division by zero in {source!r}") from None

    return run


def evaluate(source: str | float | int, env: Mapping[str, Any]) -> Any:
    """Evaluate a numeric literal or an expression string against ``env``."""
    if isinstance(source, (int, float)):
        return source
    return compile_expr(source)(env)


def compile_actions(source: str) -> list[tuple[str, str, Callable[[Mapping[str, Any]], Any]]]:
    """Parse ``"x = e1; y = e2"`` into ordered (target, rhs, compiled rhs) triples.

    Assignments are applied sequentially, so later right-hand sides see
    earlier updates (C-like semantics).
    """
    out = []
    for stmt in (s.strip() for s in source.split(";")):
        if not stmt:
            continue
        for op in ("+=", "-=", "|=", "&="):
            if op in stmt:
                target, rhs = stmt.split(op, 1)
                target = target.strip()
                rhs = f"{target} {op[0]} ({rhs.strip()})"
                break
        else:
            if "=" not in stmt.replace("==", "").replace("!=", "").replace("<=", "").replace(">=", ""):
                raise ExpressionError(f"not an assignment: {stmt!r}")
            idx = _assignment_split(stmt)
            target, rhs = stmt[:idx].strip(), stmt[idx + 1 :].strip()
        if not target.isidentifier():
            raise ExpressionError(f"bad assignment target {target!r}")
        out.append((target, rhs, compile_expr(rhs)))
    return out


def _assignment_split(stmt: str) -> int:
    for i, ch in enumerate(stmt):
        if ch != "=":
            continue
        prev = stmt[i - 1] if i else ""
        nxt = stmt[i + 1] if i + 1 < len(stmt) else ""
        if prev not in "=!<>" and nxt != "=":
            return i
    raise ExpressionError(f"not an assignment: {stmt!r}")
