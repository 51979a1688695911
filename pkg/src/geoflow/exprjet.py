"""Closed-form scalar expressions and their truncated Taylor jets.

Expressions are small immutable ASTs over coordinates ``x0..x{n-1}``.
Evaluation produces a :class:`Jet`: the Taylor coefficients of the
expression at a point, up to a fixed order.  Coefficients are stored
divided by the multi-index factorial, so jet multiplication is a plain
truncated convolution and the Leibniz rule holds exactly.

The maximal jet order is 4: third derivatives of the metric (needed for
divergences of curvature tensors) plus one spare order.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

MAX_ORDER = 4

_FUNCTIONS = ("exp", "log", "sin", "cos", "sinh", "cosh", "sqrt")


class ExprError(ValueError):
    """Malformed expression source or out-of-range coordinate."""


class DomainError(ArithmeticError):
    """Evaluation hit a singular point (division by zero, log of a
    non-positive number, ...); carries the offending node kind."""

    def __init__(self, node: str, message: str):
        super().__init__(f"{node}: {message}")
        self.node = node


# ---------------------------------------------------------------------------
# Jet spaces
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _space(dim: int, order: int) -> "JetSpace":
    return JetSpace(dim, order)


class JetSpace:
    """Index bookkeeping for jets of a given dimension and order.

    Holds the multi-index table, the multiplication (convolution) table
    and per-axis differentiation tables.  Instances are cached; use
    :func:`jet_space`.
    """

    def __init__(self, dim: int, order: int):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        if not 0 <= order <= MAX_ORDER:
            raise ValueError(f"jet order must be in [0, {MAX_ORDER}]")
        self.dim = dim
        self.order = order
        indices: list[tuple[int, ...]] = []
        for total in range(order + 1):
            for combo in combinations_with_replacement(range(dim), total):
                alpha = [0] * dim
                for axis in combo:
                    alpha[axis] += 1
                indices.append(tuple(alpha))
        self.indices = indices
        self.ncoef = len(indices)
        self.index_of = {alpha: k for k, alpha in enumerate(indices)}
        self.degree = np.array([sum(a) for a in indices])

        ti, tj, tk = [], [], []
        for i, a in enumerate(indices):
            for j, b in enumerate(indices):
                c = tuple(x + y for x, y in zip(a, b))
                k = self.index_of.get(c)
                if k is not None:
                    ti.append(i)
                    tj.append(j)
                    tk.append(k)
        self._mul_i = np.array(ti)
        self._mul_j = np.array(tj)
        self._mul_k = np.array(tk)

        # derivative tables: dst coefficient beta pulls from beta + e_axis
        self._deriv: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for axis in range(dim):
            src, dst, fac = [], [], []
            for k, beta in enumerate(indices):
                if sum(beta) >= order:
                    continue
                up = list(beta)
                up[axis] += 1
                src.append(self.index_of[tuple(up)])
                dst.append(k)
                fac.append(beta[axis] + 1)
            self._deriv.append((np.array(src), np.array(dst), np.array(fac, dtype=float)))

    def truncation_mask(self, order: int) -> np.ndarray:
        return self.degree <= order


def jet_space(dim: int, order: int) -> JetSpace:
    return _space(dim, order)


class Jet:
    """Truncated Taylor expansion, possibly batched over leading axes.

    ``coef`` has shape ``(..., ncoef)``; ``order`` is the highest total
    degree whose coefficients are meaningful (it drops by one per
    differentiation).  Coefficient at multi-index alpha equals the
    partial derivative divided by alpha!.
    """

    __slots__ = ("space", "coef", "order")

    def __init__(self, space: JetSpace, coef: np.ndarray, order: int | None = None):
        self.space = space
        self.coef = coef
        self.order = space.order if order is None else order

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(space: JetSpace, value, batch_shape: tuple[int, ...] = ()) -> "Jet":
        coef = np.zeros(batch_shape + (space.ncoef,))
        coef[..., 0] = value
        return Jet(space, coef)

    @staticmethod
    def coordinate(space: JetSpace, axis: int, value) -> "Jet":
        value = np.asarray(value, dtype=float)
        coef = np.zeros(value.shape + (space.ncoef,))
        coef[..., 0] = value
        if space.order >= 1:
            e = tuple(1 if i == axis else 0 for i in range(space.dim))
            coef[..., space.index_of[e]] = 1.0
        return Jet(space, coef)

    # -- accessors ----------------------------------------------------------

    @property
    def value(self) -> np.ndarray:
        return self.coef[..., 0]

    def coefficient(self, alpha: tuple[int, ...]) -> np.ndarray:
        if sum(alpha) > self.order:
            raise ValueError(f"multi-index {alpha} exceeds valid order {self.order}")
        return self.coef[..., self.space.index_of[tuple(alpha)]]

    def _trunc(self, coef: np.ndarray, order: int) -> np.ndarray:
        return coef * self.space.truncation_mask(order)

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(self.space, other, np.shape(other))

    def __add__(self, other) -> "Jet":
        other = self._coerce(other)
        order = min(self.order, other.order)
        return Jet(self.space, self._trunc(self.coef + other.coef, order), order)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        other = self._coerce(other)
        order = min(self.order, other.order)
        return Jet(self.space, self._trunc(self.coef - other.coef, order), order)

    def __rsub__(self, other) -> "Jet":
        return self._coerce(other) - self

    def __neg__(self) -> "Jet":
        return Jet(self.space, -self.coef, self.order)

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            return Jet(self.space, self.coef * np.asarray(other)[..., None], self.order)
        sp = self.space
        order = min(self.order, other.order)
        a = self.coef[..., sp._mul_i] * other.coef[..., sp._mul_j]
        batch = np.broadcast_shapes(self.coef.shape[:-1], other.coef.shape[:-1])
        out = np.zeros(batch + (sp.ncoef,))
        np.add.at(out, (Ellipsis, sp._mul_k), a)
        return Jet(sp, self._trunc(out, order), order)

    def __rmul__(self, other) -> "Jet":
        return self * other

    def __truediv__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other) -> "Jet":
        return self.reciprocal() * other

    def derivative(self, axis: int) -> "Jet":
        if self.order < 1:
            raise ValueError("jet order exhausted, cannot differentiate")
        src, dst, fac = self.space._deriv[axis]
        out = np.zeros_like(self.coef)
        out[..., dst] = self.coef[..., src] * fac
        return Jet(self.space, self._trunc(out, self.order - 1), self.order - 1)

    # -- composition with univariate series ---------------------------------

    def _compose(self, series: np.ndarray) -> "Jet":
        """Horner evaluation of sum_k series[k] * (self - value)^k.

        ``series`` has shape (order+1, ...) with batch axes matching the
        jet's batch shape.
        """
        sp = self.space
        order = self.order
        centred = Jet(sp, self.coef.copy(), order)
        centred.coef[..., 0] = 0.0
        top = np.broadcast_to(series[order], self.value.shape)
        result = Jet.constant(sp, top, top.shape)
        result.order = order
        for k in range(order - 1, -1, -1):
            result = result * centred + series[k]
        return result

    def _series(self, dfn) -> "Jet":
        """Compose with a univariate function given by value/derivative
        callables; dfn(k, a) returns f^{(k)}(a)."""
        a = self.value
        terms = np.stack(
            [dfn(k, a) / math.factorial(k) for k in range(self.order + 1)]
        )
        return self._compose(terms)

    def reciprocal(self) -> "Jet":
        a = self.value
        if np.any(a == 0.0):
            raise DomainError("div", "division by zero at a sample point")
        series = np.stack(
            [(-1.0) ** k / a ** (k + 1) for k in range(self.order + 1)]
        )
        return self._compose(series)

    def exp(self) -> "Jet":
        return self._series(lambda k, a: np.exp(a))

    def log(self) -> "Jet":
        a = self.value
        if np.any(a <= 0.0):
            raise DomainError("log", "log of a non-positive value")
        def d(k, a):
            if k == 0:
                return np.log(a)
            return (-1.0) ** (k - 1) * math.factorial(k - 1) / a ** k
        return self._series(d)

    def sin(self) -> "Jet":
        cycle = (np.sin, np.cos, lambda a: -np.sin(a), lambda a: -np.cos(a))
        return self._series(lambda k, a: cycle[k % 4](a))

    def cos(self) -> "Jet":
        cycle = (np.cos, lambda a: -np.sin(a), lambda a: -np.cos(a), np.sin)
        return self._series(lambda k, a: cycle[k % 4](a))

    def sinh(self) -> "Jet":
        return self._series(lambda k, a: np.sinh(a) if k % 2 == 0 else np.cosh(a))

    def cosh(self) -> "Jet":
        return self._series(lambda k, a: np.cosh(a) if k % 2 == 0 else np.sinh(a))

    def sqrt(self) -> "Jet":
        a = self.value
        if np.any(a <= 0.0):
            raise DomainError("sqrt", "sqrt of a non-positive value")
        def d(k, a):
            c = 1.0
            p = 0.5
            for _ in range(k):
                c *= p
                p -= 1.0
            return c * a ** (0.5 - k)
        return self._series(d)

    def ipow(self, m: int) -> "Jet":
        if m < 0:
            return self.ipow(-m).reciprocal()
        result = Jet.constant(self.space, 1.0, self.value.shape)
        result.order = self.order
        base = self
        while m:
            if m & 1:
                result = result * base
            base = base * base if m > 1 else base
            m >>= 1
        return result

    def fpow(self, q: float) -> "Jet":
        # non-integer powers go through exp(q log .), positive base only
        return (self.log() * q).exp()


# ---------------------------------------------------------------------------
# Expression AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    """Immutable expression node.

    ``op`` is one of const, coord, add, sub, mul, div, neg, pow, or a
    function name from exp/log/sin/cos/sinh/cosh/sqrt.
    """

    op: str
    args: tuple = field(default=())
    value: object = None  # const payload, coord index, or pow exponent

    # operator sugar for programmatic construction in tests and scenes
    def __add__(self, other):
        return Expr("add", (self, as_expr(other)))

    def __radd__(self, other):
        return Expr("add", (as_expr(other), self))

    def __sub__(self, other):
        return Expr("sub", (self, as_expr(other)))

    def __rsub__(self, other):
        return Expr("sub", (as_expr(other), self))

    def __mul__(self, other):
        return Expr("mul", (self, as_expr(other)))

    def __rmul__(self, other):
        return Expr("mul", (as_expr(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expr("div", (as_expr(other), self))

    def __neg__(self):
        return Expr("neg", (self,))

    def __pow__(self, exponent):
        return Expr("pow", (self,), exponent)

    def coords_used(self) -> set[int]:
        if self.op == "coord":
            return {self.value}
        out: set[int] = set()
        for a in self.args:
            out |= a.coords_used()
        return out


def const(v) -> Expr:
    return Expr("const", (), float(v))


def coord(i: int) -> Expr:
    return Expr("coord", (), int(i))


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


def fn(name: str, arg: Expr) -> Expr:
    if name not in _FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    return Expr(name, (as_expr(arg),))


def exp(a):
    return fn("exp", as_expr(a))


def log(a):
    return fn("log", as_expr(a))


def sin(a):
    return fn("sin", as_expr(a))


def cos(a):
    return fn("cos", as_expr(a))


def sinh(a):
    return fn("sinh", as_expr(a))


def cosh(a):
    return fn("cosh", as_expr(a))


def sqrt(a):
    return fn("sqrt", as_expr(a))


def shift_coords(e: Expr, offset: int) -> Expr:
    """Remap coordinate i -> i + offset (factor charts into a product chart)."""
    if e.op == "coord":
        return coord(e.value + offset)
    if e.op == "const":
        return e
    return Expr(e.op, tuple(shift_coords(a, offset) for a in e.args), e.value)


def remap_coords(e: Expr, mapping: dict[int, int]) -> Expr:
    if e.op == "coord":
        return coord(mapping[e.value])
    if e.op == "const":
        return e
    return Expr(e.op, tuple(remap_coords(a, mapping) for a in e.args), e.value)


# ---------------------------------------------------------------------------
# Parsing (piggybacks on the Python expression grammar via ast;
# both ^ and ** denote powers)
# ---------------------------------------------------------------------------

def _default_names(dim: int) -> dict[str, int]:
    names = {f"x{i}": i for i in range(dim)}
    aliases: dict[int, tuple[str, ...]] = {
        1: ("x",),
        2: ("x", "y"),
        3: ("x", "y", "z"),
        4: ("t", "x", "y", "z"),
    }
    if dim in aliases:
        for i, name in enumerate(aliases[dim]):
            names.setdefault(name, i)
    if dim == 1:
        names.setdefault("t", 0)
    return names


def parse_expression(src: str, dim: int, names: dict[str, int] | None = None) -> Expr:
    """Parse an expression string with coordinates x0..x{dim-1}.

    Aliases t/x/y/z are accepted for dims <= 4, ``pi`` is a constant, and
    powers are written with ^ or **.  Custom coordinate names may be
    supplied via ``names``.
    """
    if dim < 1:
        raise ExprError("dimension must be positive")
    table = dict(_default_names(dim))
    if names:
        table.update(names)
    try:
        tree = ast.parse(src.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"syntax error at offset {exc.offset}: {exc.msg}") from None
    return _from_ast(tree.body, dim, table)


def _const_fold(e: Expr):
    """Return the numeric value of a constant expression, else None."""
    if e.op == "const":
        return e.value
    if e.op == "neg":
        v = _const_fold(e.args[0])
        return None if v is None else -v
    if e.op in ("add", "sub", "mul", "div"):
        a = _const_fold(e.args[0])
        b = _const_fold(e.args[1])
        if a is None or b is None:
            return None
        return {"add": a + b, "sub": a - b, "mul": a * b,
                "div": a / b if b != 0 else None}[e.op]
    return None


def _from_ast(node, dim: int, names: dict[str, int]) -> Expr:
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExprError(f"unsupported literal {node.value!r} at column {node.col_offset}")
        return const(node.value)
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return const(math.pi)
        if node.id in names:
            i = names[node.id]
            if i >= dim:
                raise ExprError(f"coordinate {node.id!r} out of range for dim {dim}")
            return coord(i)
        raise ExprError(f"unknown identifier {node.id!r} at column {node.col_offset}")
    if isinstance(node, ast.UnaryOp):
        inner = _from_ast(node.operand, dim, names)
        if isinstance(node.op, ast.USub):
            return -inner
        if isinstance(node.op, ast.UAdd):
            return inner
        raise ExprError(f"unsupported unary operator at column {node.col_offset}")
    if isinstance(node, ast.BinOp):
        left = _from_ast(node.left, dim, names)
        if isinstance(node.op, ast.Pow):
            right = _from_ast(node.right, dim, names)
            q = _const_fold(right)
            if q is None:
                # variable exponent: a^b == exp(b log a)
                return exp(right * log(left))
            frac = Fraction(q).limit_denominator(10**6)
            if frac.denominator == 1:
                return Expr("pow", (left,), int(frac))
            return Expr("pow", (left,), float(q))
        right = _from_ast(node.right, dim, names)
        ops = {ast.Add: "add", ast.Sub: "sub", ast.Mult: "mul", ast.Div: "div"}
        for klass, name in ops.items():
            if isinstance(node.op, klass):
                return Expr(name, (left, right))
        raise ExprError(f"unsupported operator at column {node.col_offset}")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords or len(node.args) != 1:
            raise ExprError(f"malformed function call at column {node.col_offset}")
        name = node.func.id
        if name not in _FUNCTIONS:
            raise ExprError(f"unknown function {name!r} at column {node.col_offset}")
        return fn(name, _from_ast(node.args[0], dim, names))
    raise ExprError(f"unsupported syntax at column {getattr(node, 'col_offset', '?')}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_jet(e: Expr, point, order: int) -> Jet:
    """Taylor jet of ``e`` at ``point`` (shape (n,) or batched (..., n))."""
    point = np.asarray(point, dtype=float)
    dim = point.shape[-1]
    space = jet_space(dim, order)
    return _eval(e, point, space)


def _eval(e: Expr, point: np.ndarray, space: JetSpace) -> Jet:
    op = e.op
    if op == "const":
        return Jet.constant(space, e.value, point.shape[:-1])
    if op == "coord":
        if e.value >= space.dim:
            raise ExprError(f"coordinate x{e.value} out of range for dim {space.dim}")
        return Jet.coordinate(space, e.value, point[..., e.value])
    if op in ("add", "sub", "mul", "div"):
        a = _eval(e.args[0], point, space)
        b = _eval(e.args[1], point, space)
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        return a / b
    if op == "neg":
        return -_eval(e.args[0], point, space)
    if op == "pow":
        base = _eval(e.args[0], point, space)
        if isinstance(e.value, int):
            return base.ipow(e.value)
        return base.fpow(float(e.value))
    if op in _FUNCTIONS:
        return getattr(_eval(e.args[0], point, space), op)()
    raise ExprError(f"unknown node {op!r}")


def evaluate_value(e: Expr, point) -> np.ndarray:
    """Plain (order-0) evaluation."""
    return evaluate_jet(e, point, 0).value


def partial_derivative(e: Expr, alpha, point) -> np.ndarray:
    """The partial derivative of ``e`` of multi-order ``alpha`` at ``point``."""
    alpha = tuple(int(a) for a in alpha)
    total = sum(alpha)
    if total > MAX_ORDER:
        raise ValueError(f"derivative order {total} exceeds supported {MAX_ORDER}")
    jet = evaluate_jet(e, point, total)
    fac = 1.0
    for a in alpha:
        fac *= math.factorial(a)
    return jet.coefficient(alpha) * fac
