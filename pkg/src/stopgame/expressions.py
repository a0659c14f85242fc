"""A small closed-form expression language for coefficient functions.

Expressions are plain strings such as ``"min(1, x^2)"`` or ``"0.5*a1 - x1"`` and
evaluate pointwise with numpy broadcasting. Recognised names:

* ``t`` -- time
* ``x1 .. x9`` -- state coordinates (``x`` is an alias for ``x1``)
* ``a1 .. a9`` -- control components (``a`` is an alias for ``a1``)
* ``pi``

Operators ``+ - * /`` and power (``**`` or ``^``); functions ``min``, ``max``,
``abs``, ``exp``, ``cos``, ``sin``, ``pow``. Anything else is rejected at parse time.
"""

from __future__ import annotations

import ast
import math
import re

import numpy as np

from .errors import ExpressionError

_FUNCTIONS = {
    "min": np.minimum,
    "max": np.maximum,
    "abs": np.abs,
    "exp": np.exp,
    "cos": np.cos,
    "sin": np.sin,
    "pow": np.power,
}
_FUNC_ARITY = {"min": 2, "max": 2, "abs": 1, "exp": 1, "cos": 1, "sin": 1, "pow": 2}

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARYOPS = (ast.UAdd, ast.USub)
_NAME_RE = re.compile(r"^(t|pi|x|a|x[1-9]|a[1-9])$")


def _check(node: ast.AST) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
        _check(node.left)
        _check(node.right)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, _UNARYOPS):
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
        _check(node.operand)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError(f"unknown function in {ast.unparse(node)!r}")
        if node.keywords or len(node.args) != _FUNC_ARITY[node.func.id]:
            raise ExpressionError(
                f"{node.func.id} takes {_FUNC_ARITY[node.func.id]} positional argument(s)"
            )
        for arg in node.args:
            _check(arg)
    elif isinstance(node, ast.Name):
        if not _NAME_RE.match(node.id):
            raise ExpressionError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"constant {node.value!r} is not a real number")
    else:
        raise ExpressionError(f"syntax {type(node).__name__} not allowed")


def _names(tree: ast.AST) -> set[str]:
    return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and n.id not in _FUNCTIONS}


class Expr:
    """A parsed, vectorised scalar expression.

    Call with ``expr(t, x, a)`` where ``x`` has shape ``(..., d)`` and ``a`` has
    shape ``(..., m)`` (or are broadcastable); the result has the broadcast
    leading shape.
    """

    __slots__ = ("source", "_code", "names")

    def __init__(self, source: str | float | int):
        if isinstance(source, (int, float)) and not isinstance(source, bool):
            source = repr(float(source))
        if not isinstance(source, str):
            raise ExpressionError(f"expression must be a string, got {type(source).__name__}")
        self.source = source
        text = source.replace("^", "**")
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        _check(tree)
        self.names = frozenset(_names(tree))
        self._code = compile(tree, f"<expr {source}>", "eval")

    @property
    def uses_time(self) -> bool:
        return "t" in self.names

    @property
    def uses_control(self) -> bool:
        return any(n == "a" or n.startswith("a") for n in self.names)

    def max_state_index(self) -> int:
        idx = [1 if n == "x" else int(n[1]) for n in self.names if n[0] == "x"]
        return max(idx, default=0)

    def max_control_index(self) -> int:
        idx = [1 if n == "a" else int(n[1]) for n in self.names if n[0] == "a"]
        return max(idx, default=0)

    def __call__(self, t, x=None, a=None) -> np.ndarray:
        env: dict[str, object] = dict(_FUNCTIONS)
        env["pi"] = math.pi
        env["t"] = np.asarray(t, dtype=float)
        shapes = [np.shape(t)]
        if x is not None:
            x = np.asarray(x, dtype=float)
            shapes.append(x.shape[:-1])
            for k in range(x.shape[-1]):
                env[f"x{k + 1}"] = x[..., k]
            env["x"] = x[..., 0]
        if a is not None:
            a = np.asarray(a, dtype=float)
            shapes.append(a.shape[:-1])
            for k in range(a.shape[-1]):
                env[f"a{k + 1}"] = a[..., k]
            env["a"] = a[..., 0]
        try:
            with np.errstate(all="ignore"):
                out = eval(self._code, {"__builtins__": {}}, env)  # noqa: S307 - whitelisted AST
        except KeyError as exc:  # pragma: no cover - eval raises NameError instead
            raise ExpressionError(f"{self.source!r}: missing variable {exc}") from None
        except NameError as exc:
            raise ExpressionError(f"{self.source!r}: {exc}") from None
        shape = np.broadcast_shapes(*shapes)
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def __repr__(self) -> str:
        return f"Expr({self.source!r})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Expr) and other.source == self.source

    def __hash__(self) -> int:
        return hash(self.source)
