"""A tiny vectorised expression language for declarative structural mechanisms.

Supported: integer/float literals, variable and table names, arithmetic
(``+ - * / // % **``), comparisons (chained), ``and``/``or``/``not``,
``a if cond else b``, table lookup ``t[i, j]`` or ``t[i][j]`` and the
functions ``min``, ``max``, ``abs``, ``int`` and ``where``. Everything
evaluates elementwise over numpy arrays.
"""

from __future__ import annotations

import ast
import operator
from typing import Mapping

import numpy as np


class ExprError(ValueError):
    pass


_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.FloorDiv: operator.floordiv,
    ast.Mod: operator.mod,
    ast.Pow: operator.pow,
}
_CMPOPS = {
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
}
_FUNCS = {
    "min": np.minimum,
    "max": np.maximum,
    "abs": np.abs,
    "int": lambda a: np.asarray(a).astype(np.int64),
    "where": np.where,
}
_ALLOWED = (
    ast.Expression, ast.Constant, ast.Name, ast.Load, ast.BinOp, ast.UnaryOp, ast.BoolOp,
    ast.Compare, ast.IfExp, ast.Call, ast.Subscript, ast.Tuple, ast.And, ast.Or, ast.Not,
    ast.USub, ast.UAdd, *_BINOPS, *_CMPOPS,
)


class Expr:
    """A parsed, validated expression; call it with a name -> value mapping."""

    def __init__(self, source: str):
        self.source = str(source)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"cannot parse {self.source!r}: {exc.msg}") from None
        names = set()
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ExprError(f"{type(node).__name__} not allowed in {self.source!r}")
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                    raise ExprError(f"only {sorted(_FUNCS)} may be called in {self.source!r}")
            elif isinstance(node, ast.Name):
                names.add(node.id)
            elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, bool)):
                raise ExprError(f"non-numeric literal in {self.source!r}")
        self._tree = tree.body
        self.names = frozenset(names - set(_FUNCS))

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __call__(self, env: Mapping[str, object]):
        return _eval(self._tree, env)


def _subscript_chain(node):
    indices = []
    while isinstance(node, ast.Subscript):
        sl = node.slice
        parts = sl.elts if isinstance(sl, ast.Tuple) else [sl]
        indices = list(parts) + indices
        node = node.value
    return node, indices


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        try:
            return env[node.id]
        except KeyError:
            raise ExprError(f"unbound name {node.id!r}") from None
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](np.asarray(_eval(node.left, env)), np.asarray(_eval(node.right, env)))
    if isinstance(node, ast.UnaryOp):
        v = np.asarray(_eval(node.operand, env))
        if isinstance(node.op, ast.Not):
            return np.logical_not(v)
        return -v if isinstance(node.op, ast.USub) else +v
    if isinstance(node, ast.BoolOp):
        vals = [np.asarray(_eval(v, env), dtype=bool) for v in node.values]
        fn = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
        out = vals[0]
        for v in vals[1:]:
            out = fn(out, v)
        return out
    if isinstance(node, ast.Compare):
        left = np.asarray(_eval(node.left, env))
        out = None
        for op, comp in zip(node.ops, node.comparators):
            right = np.asarray(_eval(comp, env))
            res = _CMPOPS[type(op)](left, right)
            out = res if out is None else np.logical_and(out, res)
            left = right
        return out
    if isinstance(node, ast.IfExp):
        return np.where(
            np.asarray(_eval(node.test, env), dtype=bool), _eval(node.body, env), _eval(node.orelse, env)
        )
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](*(_eval(a, env) for a in node.args))
    if isinstance(node, ast.Subscript):
        base, indices = _subscript_chain(node)
        table = np.asarray(_eval(base, env))
        idx = tuple(np.asarray(_eval(i, env)).astype(np.int64) for i in indices)
        if len(idx) > table.ndim:
            raise ExprError(f"too many indices for table of rank {table.ndim}")
        return table[idx]
    if isinstance(node, ast.Tuple):
        raise ExprError("bare tuples are only allowed as table indices")
    raise ExprError(f"unsupported node {type(node).__name__}")
