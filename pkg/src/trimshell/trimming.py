"""Level-set trimming of spline patches and knot-span classification."""
import ast
import operator
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spline import SplineSurface

INSIDE = "inside"
OUTSIDE = "outside"
CUT = "cut"


@dataclass
class LevelSetFunction:
    """Scalar trimming function on the parameter rectangle; positive is visible.

    Parameters
    ----------
    func : callable
        ``func(r, s)`` evaluated with broadcasting numpy arrays.
    grad : callable, optional
        ``grad(r, s)`` returning ``(dphi/dr, dphi/ds)``; central differences are
        used when omitted.
    name : str
        Tag used for boundary-condition lookup.
    """

    func: Callable
    grad: Callable | None = None
    name: str = ""
    fd_step: float = 1e-6

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.asarray(self.func(xi[..., 0], xi[..., 1]), dtype=float) * np.ones(xi.shape[:-1])

    def gradient(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.grad is not None:
            gr, gs = self.grad(xi[..., 0], xi[..., 1])
            ones = np.ones(xi.shape[:-1])
            return np.stack([gr * ones, gs * ones], axis=-1)
        h = self.fd_step
        out = np.empty(xi.shape)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            out[..., k] = (self(xi + e) - self(xi - e)) / (2 * h)
        return out


def linear_levelset(a: float, b: float, c: float, name: str = "") -> LevelSetFunction:
    """``phi = a r + b s + c``."""
    return LevelSetFunction(
        func=lambda r, s: a * r + b * s + c,
        grad=lambda r, s: (a + 0 * r, b + 0 * s),
        name=name,
    )


def disk_levelset(radius: float, center=(0.0, 0.0), name: str = "") -> LevelSetFunction:
    """``phi = radius - |xi - center|`` (positive inside the disk)."""
    cr, cs = center

    def func(r, s):
        return radius - np.hypot(r - cr, s - cs)

    def grad(r, s):
        d = np.maximum(np.hypot(r - cr, s - cs), 1e-300)
        return -(r - cr) / d, -(s - cs) / d

    return LevelSetFunction(func=func, grad=grad, name=name)


# --- expression parser ---------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _norm(*args):
    return np.sqrt(sum(np.asarray(a, dtype=float) ** 2 for a in args))


_FUNCS = {"sin": np.sin, "cos": np.cos, "sqrt": np.sqrt, "abs": np.abs, "norm": _norm}
_CONSTS = {"pi": np.pi}


class ExpressionError(ValueError):
    """Malformed or unsupported level-set expression."""


def parse_expression(text: str) -> Callable:
    """Compile an arithmetic expression over ``r`` and ``s`` into a function.

    Supports ``+ - * / ^`` (``^`` is exponentiation), parentheses, numbers,
    the constant ``pi`` and the functions ``sin cos sqrt abs norm``;
    ``norm(a, b, ...)`` is the Euclidean norm of its arguments.
    """
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            v = float(node.value)
            return lambda r, s: v
        if isinstance(node, ast.Name):
            if node.id == "r":
                return lambda r, s: r
            if node.id == "s":
                return lambda r, s: s
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda r, s: v
            raise ExpressionError(f"unknown symbol {node.id!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = build(node.left), build(node.right)
            return lambda r, s: op(left(r, s), right(r, s))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op = _UNARY[type(node.op)]
            arg = build(node.operand)
            return lambda r, s: op(arg(r, s))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            fn = _FUNCS.get(node.func.id)
            if fn is None or node.keywords:
                raise ExpressionError(f"unsupported function {node.func.id!r}")
            args = [build(a) for a in node.args]
            if fn is not _norm and len(args) != 1:
                raise ExpressionError(f"{node.func.id} takes one argument")
            return lambda r, s: fn(*[a(r, s) for a in args])
        raise ExpressionError(f"unsupported syntax in {text!r}")

    return build(tree)


def expression_levelset(text: str, name: str = "") -> LevelSetFunction:
    return LevelSetFunction(func=parse_expression(text), name=name or text)


# --- trimmed patch ---------------------------------------------------------


@dataclass
class TrimmedPatch:
    """Spline surface restricted to ``{xi : phi_i(xi) >= 0 for all i}``."""

    surface: SplineSurface
    levelsets: list = field(default_factory=list)

    def __post_init__(self):
        for k, ls in enumerate(self.levelsets):
            if not ls.name:
                ls.name = f"phi{k + 1}"
        if self.levelsets:
            r0, r1, s0, s1 = self.surface.basis.bounds
            g = np.stack(np.meshgrid(np.linspace(r0, r1, 201), np.linspace(s0, s1, 201)), axis=-1)
            if np.all(composite_levelset(self, g.reshape(-1, 2))[0] < 0):
                raise ValueError("visible domain is empty")

    @property
    def basis(self):
        return self.surface.basis

    @property
    def names(self) -> list:
        return [ls.name for ls in self.levelsets]


def composite_levelset(patch: TrimmedPatch, xi) -> tuple:
    """Pointwise minimum over all trimming functions and the attaining index.

    An untrimmed patch returns ``+inf`` and index ``-1``.
    """
    xi = np.asarray(xi, dtype=float)
    if not patch.levelsets:
        return np.full(xi.shape[:-1], np.inf), np.full(xi.shape[:-1], -1)
    vals = np.stack([ls(xi) for ls in patch.levelsets], axis=0)
    return vals.min(axis=0), vals.argmin(axis=0)


def span_bounds(patch: TrimmedPatch, span) -> tuple:
    """Parameter box ``(r0, r1, s0, s1)`` of knot span ``(i, j)``."""
    ku = patch.basis.kv_u.knots
    kv = patch.basis.kv_v.knots
    i, j = span
    return ku[i], ku[i + 1], kv[j], kv[j + 1]


def sample_grid_size(p: int, q: int = 3) -> int:
    """Points per direction of the dense sign-detection grid."""
    return p * (q + 1) + 1


def classify_span(patch: TrimmedPatch, span, p: int | None = None, q: int = 3) -> str:
    """Classify a knot span as inside, outside or cut by dense sampling."""
    r0, r1, s0, s1 = span_bounds(patch, span)
    if r1 <= r0 or s1 <= s0:
        raise ValueError("empty knot span")
    if not patch.levelsets:
        return INSIDE
    if p is None:
        p = max(patch.basis.degrees)
    m = sample_grid_size(p, q)
    R, S = np.meshgrid(np.linspace(r0, r1, m), np.linspace(s0, s1, m), indexing="ij")
    phi, _ = composite_levelset(patch, np.stack([R, S], axis=-1))
    if np.all(phi > 0):
        return INSIDE
    if np.all(phi < 0):
        return OUTSIDE
    return CUT
