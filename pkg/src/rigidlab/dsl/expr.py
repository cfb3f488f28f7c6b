"""Expression trees: construction with light folding, printing, differentiation
and compilation to vectorized numpy callables."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "cosh", "sinh", "sqrt")


class DomainError(ArithmeticError):
    """Evaluation left the domain of a guarded operation."""


class Node:
    __slots__ = ()
    prec = 5

    def __add__(self, other):
        return add(self, lift(other))

    def __radd__(self, other):
        return add(lift(other), self)

    def __sub__(self, other):
        return sub(self, lift(other))

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        return mul(self, lift(other))

    def __rmul__(self, other):
        return mul(lift(other), self)

    def __truediv__(self, other):
        return div(self, lift(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True, eq=True)
class Const(Node):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Node):
    name: str


@dataclass(frozen=True, eq=True)
class Neg(Node):
    arg: Node
    prec = 3


@dataclass(frozen=True, eq=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    @property
    def prec(self):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[self.op]


@dataclass(frozen=True, eq=True)
class Func(Node):
    name: str
    arg: Node


ZERO = Const(0.0)
ONE = Const(1.0)


def lift(x) -> Node:
    if isinstance(x, Node):
        return x
    return Const(float(x))


def is_const(n: Node, value: float | None = None) -> bool:
    return isinstance(n, Const) and (value is None or n.value == value)


# builders fold constants and drop neutral elements; they never reorder terms

def add(a: Node, b: Node) -> Node:
    if is_const(a, 0.0):
        return b
    if is_const(b, 0.0):
        return a
    if is_const(a) and is_const(b):
        return Const(a.value + b.value)
    if isinstance(b, Neg):
        return BinOp("-", a, b.arg)
    return BinOp("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if is_const(b, 0.0):
        return a
    if is_const(a, 0.0):
        return neg(b)
    if is_const(a) and is_const(b):
        return Const(a.value - b.value)
    if isinstance(b, Neg):
        return BinOp("+", a, b.arg)
    return BinOp("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if is_const(a, 0.0) or is_const(b, 0.0):
        return ZERO
    if is_const(a, 1.0):
        return b
    if is_const(b, 1.0):
        return a
    if is_const(a, -1.0):
        return neg(b)
    if is_const(b, -1.0):
        return neg(a)
    if is_const(a) and is_const(b):
        return Const(a.value * b.value)
    if isinstance(a, Neg):
        return neg(mul(a.arg, b))
    if isinstance(b, Neg):
        return neg(mul(a, b.arg))
    return BinOp("*", a, b)


def div(a: Node, b: Node) -> Node:
    if is_const(b, 0.0):
        return BinOp("/", a, b)  # left for the runtime guard
    if is_const(a, 0.0):
        return ZERO
    if is_const(b, 1.0):
        return a
    if is_const(a) and is_const(b):
        return Const(a.value / b.value)
    return BinOp("/", a, b)


def power(a: Node, b: Node) -> Node:
    if is_const(b, 0.0):
        return ONE
    if is_const(b, 1.0):
        return a
    if is_const(a) and is_const(b):
        try:
            val = _pow(a.value, b.value)
        except DomainError:
            return BinOp("^", a, b)
        return Const(float(val))
    return BinOp("^", a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def func(name: str, a: Node) -> Node:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name}")
    if isinstance(a, Const):
        try:
            return Const(float(_FUNCS[name](a.value)))
        except DomainError:
            pass
    return Func(name, a)


# -- printing ---------------------------------------------------------------

def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(float(v))
    return f"({s})" if v < 0 or s.startswith("-") else s


def to_source(n: Node) -> str:
    """Render in the DSL grammar, parenthesizing only where parsing needs it."""
    if isinstance(n, Const):
        return _fmt_const(n.value)
    if isinstance(n, Var):
        return n.name
    if isinstance(n, Func):
        return f"{n.name}({to_source(n.arg)})"
    if isinstance(n, Neg):
        inner = to_source(n.arg)
        if n.arg.prec < 3:
            inner = f"({inner})"
        return f"-{inner}"
    assert isinstance(n, BinOp)
    ls, rs = to_source(n.left), to_source(n.right)
    p = n.prec
    if n.op == "^":
        if n.left.prec <= 4:
            ls = f"({ls})"
        if n.right.prec < 3:
            rs = f"({rs})"
        return f"{ls}^{rs}"
    if n.left.prec < p:
        ls = f"({ls})"
    # equal precedence on the right is parenthesized so reparsing keeps the tree
    if n.right.prec <= p:
        rs = f"({rs})"
    return f"{ls} {n.op} {rs}" if n.op in "+-" else f"{ls}{n.op}{rs}"


# -- structure ---------------------------------------------------------------

def free_vars(n: Node) -> frozenset[str]:
    if isinstance(n, Var):
        return frozenset([n.name])
    if isinstance(n, Const):
        return frozenset()
    if isinstance(n, (Neg, Func)):
        return free_vars(n.arg)
    return free_vars(n.left) | free_vars(n.right)


def substitute(n: Node, name: str, value: Node) -> Node:
    """Replace a variable and refold constants on the way up."""
    if isinstance(n, Var):
        return value if n.name == name else n
    if isinstance(n, Const):
        return n
    if isinstance(n, Neg):
        return neg(substitute(n.arg, name, value))
    if isinstance(n, Func):
        return func(n.name, substitute(n.arg, name, value))
    left, right = substitute(n.left, name, value), substitute(n.right, name, value)
    return _BUILD[n.op](left, right)


def summands(n: Node) -> list[tuple[int, Node]]:
    """Flatten top-level +/- into signed terms."""
    if isinstance(n, BinOp) and n.op in "+-":
        out = summands(n.left)
        sign = 1 if n.op == "+" else -1
        out += [(sign * s, t) for s, t in summands(n.right)]
        return out
    if isinstance(n, Neg):
        return [(-s, t) for s, t in summands(n.arg)]
    return [(1, n)]


# -- differentiation ---------------------------------------------------------

@lru_cache(maxsize=4096)
def diff(n: Node, var: str) -> Node:
    if isinstance(n, Const):
        return ZERO
    if isinstance(n, Var):
        return ONE if n.name == var else ZERO
    if var not in free_vars(n):
        return ZERO
    if isinstance(n, Neg):
        return neg(diff(n.arg, var))
    if isinstance(n, Func):
        u, du = n.arg, diff(n.arg, var)
        name = n.name
        if name == "sin":
            outer = func("cos", u)
        elif name == "cos":
            outer = neg(func("sin", u))
        elif name == "exp":
            outer = n
        elif name == "log":
            return div(du, u)
        elif name == "cosh":
            outer = func("sinh", u)
        elif name == "sinh":
            outer = func("cosh", u)
        else:  # sqrt
            return div(du, mul(Const(2.0), n))
        return mul(outer, du)
    a, b = n.left, n.right
    da, db = diff(a, var), diff(b, var)
    if n.op == "+":
        return add(da, db)
    if n.op == "-":
        return sub(da, db)
    if n.op == "*":
        return add(mul(da, b), mul(a, db))
    if n.op == "/":
        if is_const(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # power
    if var not in free_vars(b):
        if isinstance(b, Const):
            return mul(mul(b, power(a, Const(b.value - 1.0))), da)
        return mul(mul(b, power(a, sub(b, ONE))), da)
    if var not in free_vars(a):
        return mul(mul(n, func("log", a)), db)
    return mul(n, add(mul(db, func("log", a)), div(mul(b, da), a)))


# -- guarded numerics --------------------------------------------------------

def _guard_finite(x):
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite intermediate value")
    return x


def _log(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("log of a nonpositive argument")
    return np.log(x)


def _sqrt(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("sqrt of a negative argument")
    return np.sqrt(x)


def _div(a, b):
    b = np.asarray(b, dtype=float)
    if np.any(b == 0):
        raise DomainError("division by zero")
    return np.divide(a, b)


def _pow(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    integral = np.all(b == np.round(b))
    if not integral and np.any(a < 0):
        raise DomainError("fractional power of a negative base")
    if np.any((a == 0) & (b < 0)):
        raise DomainError("negative power of zero")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.power(a, b)
    return _guard_finite(out)


def _exp(x):
    with np.errstate(over="ignore"):
        return _guard_finite(np.exp(x))


def _cosh(x):
    with np.errstate(over="ignore"):
        return _guard_finite(np.cosh(x))


def _sinh(x):
    with np.errstate(over="ignore"):
        return _guard_finite(np.sinh(x))


_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": _exp, "log": _log,
          "cosh": _cosh, "sinh": _sinh, "sqrt": _sqrt}
_BUILD = {"+": add, "-": sub, "*": mul, "/": div, "^": power}

ARGUMENTS = ("q1", "q2", "p1", "p2", "k")


def _py(n: Node) -> str:
    if isinstance(n, Const):
        return repr(float(n.value))
    if isinstance(n, Var):
        return n.name
    if isinstance(n, Neg):
        return f"(-{_py(n.arg)})"
    if isinstance(n, Func):
        return f"_{n.name}({_py(n.arg)})"
    a, b = _py(n.left), _py(n.right)
    if n.op == "/":
        return f"_div({a}, {b})"
    if n.op == "^":
        if isinstance(n.right, Const) and n.right.value == int(n.right.value) and n.right.value >= 0:
            return f"({a} ** {int(n.right.value)})"
        return f"_pow({a}, {b})"
    return f"({a} {n.op} {b})"


@lru_cache(maxsize=4096)
def compile_node(n: Node):
    """Compile to ``f(q1, q2, p1, p2, k)`` operating on broadcastable arrays."""
    return compile_nodes((n,))


@lru_cache(maxsize=4096)
def compile_nodes(nodes: tuple[Node, ...]):
    """Compile several trees into one function returning a tuple of values."""
    body = ", ".join(_py(n) for n in nodes)
    src = f"lambda {', '.join(ARGUMENTS)}: ({body},)"
    ns = {f"_{name}": fn for name, fn in _FUNCS.items()}
    ns.update(_div=_div, _pow=_pow)
    return eval(compile(src, "<rigidlab-expr>", "eval"), ns)  # noqa: S307 - generated from a parsed tree
