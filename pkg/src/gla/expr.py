"""Expression DSL: parsing, symbolic differentiation and vectorized evaluation.

Expressions are immutable, hash-consed DAG nodes.  Building the same
expression twice returns the same object, so derivative and evaluation
caches keyed on node identity share work across a whole computation.

Two opaque node kinds keep matrix inverses and implicit (Newton) solves
numeric while their derivatives stay symbolic:

* ``inverse_entry(M, i, j)``: entry (i, j) of M^{-1}, M a square matrix of Exprs.
* ``implicit_root(system, k)``: component k of the solution u of R(vars, u) = 0.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

FUNCS = ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh")
COND_WARN = 1e8


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, msg: str, position: int):
        super().__init__(f"{msg} at position {position}")
        self.position = position


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str):
        super().__init__(f"undeclared variable {name!r}")
        self.name = name


class NumericalError(Exception):
    """Raised when a numeric evaluation cannot produce a trustworthy value."""

    def __init__(self, msg: str, point: dict | None = None):
        if point:
            msg = f"{msg} at {format_point(point)}"
        super().__init__(msg)
        self.point = point


class DomainError(NumericalError):
    """Singular function argument (log of non-positive, sqrt of negative, 1/0, ...)."""


class SingularMatrixError(NumericalError):
    pass


class NewtonError(NumericalError):
    pass


class IllConditionedWarning(UserWarning):
    pass


def format_point(point: Mapping[str, float]) -> str:
    return "{" + ", ".join(f"{k}={v:.6g}" for k, v in point.items()) + "}"


# ---------------------------------------------------------------------------
# symbol table


_NAME_RE = re.compile(r"^([A-Za-z_][A-Za-z_0-9]*)\[(\d+)\]$")


@dataclass(frozen=True)
class SymbolTable:
    """Ordered coordinate names: base x[1..m], fiber y[1..r] or p[1..r], optional aux z[1..n]."""

    base_coords: tuple[str, ...]
    fiber_coords: tuple[str, ...] = ()
    aux_coords: tuple[str, ...] = ()

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("duplicate coordinate names")
        for group in (self.base_coords, self.fiber_coords, self.aux_coords):
            _check_contiguous(group)

    @classmethod
    def make(cls, m: int, r: int = 0, fiber: str = "y", n: int = 0, base: str = "x", aux: str = "z"):
        return cls(
            tuple(f"{base}[{i}]" for i in range(1, m + 1)),
            tuple(f"{fiber}[{i}]" for i in range(1, r + 1)),
            tuple(f"{aux}[{i}]" for i in range(1, n + 1)),
        )

    @property
    def names(self) -> tuple[str, ...]:
        return self.base_coords + self.fiber_coords + self.aux_coords

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self):
        return len(self.names)


def _check_contiguous(group: Sequence[str]):
    prefix = None
    for k, name in enumerate(group, start=1):
        mt = _NAME_RE.match(name)
        if not mt:
            raise ValueError(f"bad coordinate name {name!r}")
        if prefix is None:
            prefix = mt.group(1)
        if mt.group(1) != prefix or int(mt.group(2)) != k:
            raise ValueError(f"coordinate indices must be 1-based and contiguous: {list(group)}")


# ---------------------------------------------------------------------------
# nodes

_INTERN: dict[tuple, "Expr"] = {}


class Expr:
    """Immutable expression node.  Use the module-level constructors, not this class."""

    __slots__ = ("op", "args", "data", "_key", "__weakref__")

    def __new__(cls, op: str, args: tuple = (), data=None):
        key = (op, tuple(id(a) for a in args), data)
        node = _INTERN.get(key)
        if node is None:
            node = object.__new__(cls)
            node.op = op
            node.args = args
            node.data = data
            node._key = key
            _INTERN[key] = node
        return node

    # arithmetic sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __rpow__(self, other):
        return power(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        # hash-consing makes identity coincide with structural equality
        return self is other

    def __repr__(self):
        try:
            return f"Expr({render(self)})"
        except ValueError:
            return f"Expr(<{self.op}>)"

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def value(self) -> float:
        if self.op != "const":
            raise ValueError("not a constant")
        return self.data

    @property
    def name(self) -> str:
        if self.op != "var":
            raise ValueError("not a variable")
        return self.data


def const(v: float) -> Expr:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("non-finite constant")
    if v == 0.0:
        v = 0.0  # fold -0.0
    return Expr("const", (), v)


def var(name: str) -> Expr:
    return Expr("var", (), name)


ZERO = const(0.0)
ONE = const(1.0)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.integer, np.floating)):
        return const(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def is_zero(e: Expr) -> bool:
    return e.op == "const" and e.data == 0.0


def is_one(e: Expr) -> bool:
    return e.op == "const" and e.data == 1.0


def neg(a: Expr) -> Expr:
    if a.op == "const":
        return const(-a.data)
    if a.op == "neg":
        return a.args[0]
    return Expr("neg", (a,))


def add(a: Expr, b: Expr) -> Expr:
    if a.op == "const" and b.op == "const":
        return const(a.data + b.data)
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    return Expr("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.op == "const" and b.op == "const":
        return const(a.data - b.data)
    if is_zero(b):
        return a
    if is_zero(a):
        return neg(b)
    if a is b:
        return ZERO
    return Expr("sub", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a.op == "const" and b.op == "const":
        return const(a.data * b.data)
    if is_zero(a) or is_zero(b):
        return ZERO
    if is_one(a):
        return b
    if is_one(b):
        return a
    if a.op == "const" and a.data == -1.0:
        return neg(b)
    if b.op == "const" and b.data == -1.0:
        return neg(a)
    return Expr("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if b.op == "const" and b.data == 0.0:
        raise DomainError("division by constant zero")
    if a.op == "const" and b.op == "const":
        return const(a.data / b.data)
    if is_zero(a):
        return ZERO
    if is_one(b):
        return a
    return Expr("div", (a, b))


def power(a: Expr, b: Expr) -> Expr:
    if b.op == "const":
        if b.data == 0.0:
            return ONE
        if b.data == 1.0:
            return a
        if a.op == "const":
            try:
                v = a.data ** b.data
            except ZeroDivisionError:
                raise DomainError("zero to a negative power") from None
            if isinstance(v, complex) or not math.isfinite(v):
                raise DomainError("constant power out of domain")
            return const(v)
    if is_zero(a) and b.op == "const" and b.data > 0:
        return ZERO
    if is_one(a):
        return ONE
    return Expr("pow", (a, b))


def func(fname: str, a: Expr) -> Expr:
    if fname not in FUNCS:
        raise ValueError(f"unknown function {fname!r}")
    if a.op == "const":
        v = _apply_func(fname, np.asarray([a.data]))
        if not np.all(np.isfinite(v)):
            raise DomainError(f"{fname} of constant {a.data} out of domain")
        return const(float(v[0]))
    return Expr("func", (a,), fname)


def sin(a):
    return func("sin", as_expr(a))


def cos(a):
    return func("cos", as_expr(a))


def tan(a):
    return func("tan", as_expr(a))


def exp(a):
    return func("exp", as_expr(a))


def log(a):
    return func("log", as_expr(a))


def sqrt(a):
    return func("sqrt", as_expr(a))


def sinh(a):
    return func("sinh", as_expr(a))


def cosh(a):
    return func("cosh", as_expr(a))


def add_all(terms: Iterable) -> Expr:
    """Balanced sum, keeps tree depth logarithmic."""
    items = [as_expr(t) for t in terms]
    items = [t for t in items if not is_zero(t)]
    if not items:
        return ZERO
    while len(items) > 1:
        nxt = [add(items[k], items[k + 1]) for k in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def mul_all(factors: Iterable) -> Expr:
    items = [as_expr(f) for f in factors]
    if any(is_zero(f) for f in items):
        return ZERO
    items = [f for f in items if not is_one(f)]
    if not items:
        return ONE
    while len(items) > 1:
        nxt = [mul(items[k], items[k + 1]) for k in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def dot(a: Sequence, b: Sequence) -> Expr:
    return add_all(mul(as_expr(u), as_expr(v)) for u, v in zip(a, b))


# ---------------------------------------------------------------------------
# opaque nodes


def inverse_entry(matrix: Sequence[Sequence], i: int, j: int) -> Expr:
    """Entry (i, j) of the pointwise inverse of a square Expr matrix (0-based)."""
    mat = tuple(tuple(as_expr(e) for e in row) for row in matrix)
    n = len(mat)
    if any(len(row) != n for row in mat):
        raise ValueError("inverse_entry needs a square matrix")
    if all(e.op == "const" for row in mat for e in row):
        arr = np.array([[e.data for e in row] for row in mat])
        if np.linalg.matrix_rank(arr) < n:
            raise SingularMatrixError("constant matrix is singular")
        return const(np.linalg.inv(arr)[i, j])
    return Expr("inv", tuple(e for row in mat for e in row), (n, i, j))


def inverse_matrix(matrix: Sequence[Sequence]) -> list[list[Expr]]:
    """Pointwise inverse; diagonal matrices are inverted exactly, others through opaque nodes."""
    n = len(matrix)
    mat = [[as_expr(e) for e in row] for row in matrix]
    if all(is_zero(mat[i][j]) for i in range(n) for j in range(n) if i != j):
        return [[div(ONE, mat[i][i]) if i == j else ZERO for j in range(n)] for i in range(n)]
    return [[inverse_entry(mat, i, j) for j in range(n)] for i in range(n)]


def _inv_matrix_of(node: Expr) -> tuple[int, list[list[Expr]]]:
    n = node.data[0]
    flat = node.args
    return n, [list(flat[k * n:(k + 1) * n]) for k in range(n)]


class ImplicitSystem:
    """Square system R_k(vars, u) = 0 solved for u by damped Newton at evaluation time.

    ``unknowns`` are placeholder variable names used inside ``residuals``;
    ``guesses`` give the initial iterate as Exprs over the ambient variables.
    """

    _counter = 0

    def __init__(self, residuals: Sequence[Expr], unknowns: Sequence[str], guesses: Sequence[Expr],
                 max_iter: int = 50, tol: float = 1e-12):
        if not (len(residuals) == len(unknowns) == len(guesses)):
            raise ValueError("implicit system must be square")
        self.residuals = tuple(as_expr(r) for r in residuals)
        self.unknowns = tuple(unknowns)
        self.guesses = tuple(as_expr(g) for g in guesses)
        self.max_iter = max_iter
        self.tol = tol
        self.jacobian = [[differentiate(r, u) for u in self.unknowns] for r in self.residuals]
        ImplicitSystem._counter += 1
        self.uid = ImplicitSystem._counter
        self._roots = tuple(Expr("root", (), (self, k)) for k in range(len(self.unknowns)))

    def root(self, k: int) -> Expr:
        return self._roots[k]

    @property
    def roots(self) -> tuple[Expr, ...]:
        return self._roots

    def at_root(self, e: Expr) -> Expr:
        """Substitute the solution nodes for the unknown placeholders."""
        return substitute(e, dict(zip(self.unknowns, self._roots)))

    def __hash__(self):
        return self.uid

    def __eq__(self, other):
        return self is other

    def __repr__(self):
        return f"ImplicitSystem#{self.uid}"


def implicit_root(system: ImplicitSystem, k: int) -> Expr:
    return system.root(k)


# ---------------------------------------------------------------------------
# differentiation

_DCACHE: dict[tuple[int, str], Expr] = {}


def differentiate(e: Expr, v: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to the variable named ``v``."""
    key = (id(e), v)
    hit = _DCACHE.get(key)
    if hit is not None:
        return hit
    res = _diff(e, v)
    _DCACHE[key] = res
    return res


def _diff(e: Expr, v: str) -> Expr:
    op = e.op
    if op == "const":
        return ZERO
    if op == "var":
        return ONE if e.data == v else ZERO
    if op == "neg":
        return neg(differentiate(e.args[0], v))
    if op == "add":
        return add(differentiate(e.args[0], v), differentiate(e.args[1], v))
    if op == "sub":
        return sub(differentiate(e.args[0], v), differentiate(e.args[1], v))
    if op == "mul":
        a, b = e.args
        return add(mul(differentiate(a, v), b), mul(a, differentiate(b, v)))
    if op == "div":
        a, b = e.args
        da, db = differentiate(a, v), differentiate(b, v)
        if is_zero(db):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), mul(b, b))
    if op == "pow":
        a, b = e.args
        da, db = differentiate(a, v), differentiate(b, v)
        if is_zero(db):
            if is_zero(da):
                return ZERO
            return mul(mul(b, power(a, sub(b, ONE))), da)
        # general case: a^b (b' log a + b a'/a)
        return mul(e, add(mul(db, log(a)), div(mul(b, da), a)))
    if op == "func":
        a = e.args[0]
        da = differentiate(a, v)
        if is_zero(da):
            return ZERO
        f = e.data
        if f == "sin":
            g = cos(a)
        elif f == "cos":
            g = neg(sin(a))
        elif f == "tan":
            g = add(ONE, mul(e, e))
        elif f == "exp":
            g = e
        elif f == "log":
            return div(da, a)
        elif f == "sqrt":
            return div(da, mul(const(2.0), e))
        elif f == "sinh":
            g = cosh(a)
        elif f == "cosh":
            g = sinh(a)
        else:  # pragma: no cover
            raise ValueError(f)
        return mul(g, da)
    if op == "inv":
        n, i, j = e.data
        _, mat = _inv_matrix_of(e)
        dmat = [[differentiate(mat[k][l], v) for l in range(n)] for k in range(n)]
        terms = []
        for k in range(n):
            for l in range(n):
                if is_zero(dmat[k][l]):
                    continue
                terms.append(mul_all([inverse_entry(mat, i, k), dmat[k][l], inverse_entry(mat, l, j)]))
        return neg(add_all(terms))
    if op == "root":
        system, k = e.data
        if v in system.unknowns:
            return ZERO
        n = len(system.unknowns)
        jac = [[system.at_root(system.jacobian[a][b]) for b in range(n)] for a in range(n)]
        terms = []
        for a in range(n):
            dr = differentiate(system.residuals[a], v)
            if is_zero(dr):
                continue
            terms.append(mul(inverse_entry(jac, k, a), system.at_root(dr)))
        return neg(add_all(terms))
    raise ValueError(f"unknown node {op}")  # pragma: no cover


def gradient(e: Expr, names: Sequence[str]) -> list[Expr]:
    return [differentiate(e, n) for n in names]


# ---------------------------------------------------------------------------
# substitution

def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    if not mapping:
        return e
    memo: dict[int, Expr] = {}
    return _subst(e, mapping, memo)


def _subst(e: Expr, mapping, memo) -> Expr:
    hit = memo.get(id(e))
    if hit is not None:
        return hit
    op = e.op
    if op == "const":
        res = e
    elif op == "var":
        res = mapping.get(e.data, e)
    elif op == "root":
        system, k = e.data
        inner = {n: x for n, x in mapping.items() if n not in system.unknowns}
        new_res = [_subst(r, inner, {}) for r in system.residuals]
        new_guess = [_subst(g, inner, {}) for g in system.guesses]
        if all(a is b for a, b in zip(new_res, system.residuals)) and all(
                a is b for a, b in zip(new_guess, system.guesses)):
            res = e
        else:
            res = _rebuild_system(system, new_res, new_guess).root(k)
    else:
        new_args = tuple(_subst(a, mapping, memo) for a in e.args)
        if all(a is b for a, b in zip(new_args, e.args)):
            res = e
        else:
            res = _rebuild(e, new_args)
    memo[id(e)] = res
    return res


_SYSTEM_CACHE: dict[tuple, ImplicitSystem] = {}


def _rebuild_system(system: ImplicitSystem, residuals, guesses) -> ImplicitSystem:
    key = (system.unknowns, tuple(id(r) for r in residuals), tuple(id(g) for g in guesses),
           system.max_iter, system.tol)
    hit = _SYSTEM_CACHE.get(key)
    if hit is None:
        hit = ImplicitSystem(residuals, system.unknowns, guesses, system.max_iter, system.tol)
        _SYSTEM_CACHE[key] = hit
        _SYSTEM_CACHE[key + ("ref",)] = residuals  # keep ids alive
    return hit


def _rebuild(e: Expr, args: tuple) -> Expr:
    op = e.op
    if op == "neg":
        return neg(args[0])
    if op == "add":
        return add(*args)
    if op == "sub":
        return sub(*args)
    if op == "mul":
        return mul(*args)
    if op == "div":
        return div(*args)
    if op == "pow":
        return power(*args)
    if op == "func":
        return func(e.data, args[0])
    if op == "inv":
        n, i, j = e.data
        mat = [list(args[k * n:(k + 1) * n]) for k in range(n)]
        return inverse_entry(mat, i, j)
    raise ValueError(op)  # pragma: no cover


def free_vars(e: Expr) -> set[str]:
    out: set[str] = set()
    seen: set[int] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if n.op == "var":
            out.add(n.data)
        elif n.op == "root":
            system, _ = n.data
            inner = set()
            for r in system.residuals + system.guesses:
                inner |= free_vars(r)
            out |= inner - set(system.unknowns)
        else:
            stack.extend(n.args)
    return out


def depth(e: Expr) -> int:
    memo: dict[int, int] = {}

    def rec(n):
        if id(n) in memo:
            return memo[id(n)]
        d = 1 + max((rec(a) for a in n.args), default=0)
        memo[id(n)] = d
        return d

    return rec(e)


# ---------------------------------------------------------------------------
# evaluation


def _apply_func(fname: str, a: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        return getattr(np, fname)(a)


class Evaluator:
    """Evaluates many expressions over a batch of points, sharing a memo."""

    def __init__(self, env: Mapping[str, np.ndarray | float], npts: int | None = None):
        arrs = {k: np.asarray(v, dtype=float) for k, v in env.items()}
        if npts is None:
            sizes = {a.size for a in arrs.values() if a.ndim > 0}
            npts = max(sizes) if sizes else 1
        self.npts = npts
        self.env = {k: (np.broadcast_to(a, (npts,)) if a.ndim == 0 else a.reshape(npts)) for k, a in arrs.items()}
        self.memo: dict[int, np.ndarray] = {}
        self.inv_memo: dict[tuple, np.ndarray] = {}
        self.root_memo: dict[int, np.ndarray] = {}

    def point(self, k: int) -> dict:
        return {n: float(a[k]) for n, a in self.env.items()}

    def _fail(self, cls, msg: str, mask: np.ndarray):
        k = int(np.flatnonzero(mask)[0])
        raise cls(msg, self.point(k))

    def __call__(self, e: Expr) -> np.ndarray:
        return self.eval(e)

    def eval(self, e: Expr) -> np.ndarray:
        hit = self.memo.get(id(e))
        if hit is not None:
            return hit
        # iterative post-order walk so deep trees do not hit the recursion limit
        stack = [(e, False)]
        memo = self.memo
        while stack:
            node, ready = stack.pop()
            if id(node) in memo:
                continue
            if not ready:
                stack.append((node, True))
                for a in node.args:
                    if id(a) not in memo:
                        stack.append((a, False))
                continue
            memo[id(node)] = self._eval_node(node)
        return memo[id(e)]

    def _eval_node(self, node: Expr) -> np.ndarray:
        op = node.op
        n = self.npts
        if op == "const":
            return np.full(n, node.data)
        if op == "var":
            try:
                return self.env[node.data]
            except KeyError:
                raise UndeclaredVariableError(node.data) from None
        args = [self.memo[id(a)] for a in node.args]
        with np.errstate(all="ignore"):
            if op == "neg":
                return -args[0]
            if op == "add":
                return args[0] + args[1]
            if op == "sub":
                return args[0] - args[1]
            if op == "mul":
                return args[0] * args[1]
            if op == "div":
                bad = args[1] == 0.0
                if bad.any():
                    self._fail(DomainError, "division by zero", bad)
                return args[0] / args[1]
            if op == "pow":
                a, b = args
                bad = (a < 0) & (b != np.round(b))
                if bad.any():
                    self._fail(DomainError, "negative base with non-integer exponent", bad)
                bad = (a == 0) & (b < 0)
                if bad.any():
                    self._fail(DomainError, "zero to a negative power", bad)
                out = np.power(a, b)
            elif op == "func":
                a = args[0]
                f = node.data
                if f == "log":
                    bad = a <= 0
                    if bad.any():
                        self._fail(DomainError, "log of non-positive value", bad)
                elif f == "sqrt":
                    bad = a < 0
                    if bad.any():
                        self._fail(DomainError, "sqrt of negative value", bad)
                out = _apply_func(f, a)
            elif op == "inv":
                out = self._eval_inv(node)
            elif op == "root":
                out = self._eval_root(node)
            else:  # pragma: no cover
                raise ValueError(op)
        bad = ~np.isfinite(out)
        if bad.any():
            self._fail(DomainError, f"non-finite result in {op}", bad)
        return out

    def _eval_inv(self, node: Expr) -> np.ndarray:
        n, i, j = node.data
        key = tuple(id(a) for a in node.args)
        inv = self.inv_memo.get(key)
        if inv is None:
            mats = np.stack([self.eval(a) for a in node.args], axis=-1).reshape(self.npts, n, n)
            inv = batched_inverse(mats, self)
            self.inv_memo[key] = inv
        return inv[:, i, j]

    def _eval_root(self, node: Expr) -> np.ndarray:
        system, k = node.data
        sol = self.root_memo.get(system.uid)
        if sol is None:
            sol = self._newton(system)
            self.root_memo[system.uid] = sol
        return sol[:, k]

    def _newton(self, system: ImplicitSystem) -> np.ndarray:
        n = len(system.unknowns)
        u = np.stack([self.eval(g) for g in system.guesses], axis=-1).astype(float).copy()

        def resid(uu):
            sub_ev = self.child({name: uu[:, c] for c, name in enumerate(system.unknowns)})
            return np.stack([sub_ev.eval(r) for r in system.residuals], axis=-1), sub_ev

        r, ev = resid(u)
        for _ in range(system.max_iter):
            rn = np.max(np.abs(r), axis=1)
            if np.all(rn <= system.tol * (1.0 + np.max(np.abs(u), axis=1))):
                return u
            jac = np.stack([ev.eval(system.jacobian[a][b]) for a in range(n) for b in range(n)],
                           axis=-1).reshape(self.npts, n, n)
            try:
                step = np.linalg.solve(jac, -r[..., None])[..., 0]
            except np.linalg.LinAlgError:
                raise NewtonError("singular Jacobian in fiber solve", self.point(0)) from None
            alpha = np.ones(self.npts)
            for _half in range(30):
                trial = u + alpha[:, None] * step
                try:
                    r_new, ev_new = resid(trial)
                    ok = np.max(np.abs(r_new), axis=1) <= rn * (1 - 1e-4 * alpha)
                    ok |= rn <= system.tol
                except NumericalError:
                    ok = np.zeros(self.npts, dtype=bool)
                    r_new, ev_new = None, None
                if ok.all() or np.all(rn <= system.tol):
                    break
                alpha = np.where(ok, alpha, alpha / 2)
            if r_new is None:
                raise NewtonError("fiber solve left the domain", self.point(0))
            u, r, ev = trial, r_new, ev_new
        rn = np.max(np.abs(r), axis=1)
        bad = rn > system.tol * (1.0 + np.max(np.abs(u), axis=1)) * 10
        if bad.any():
            self._fail(NewtonError, f"Newton did not converge in {system.max_iter} iterations", bad)
        return u

    def child(self, extra: Mapping[str, np.ndarray]) -> "Evaluator":
        env = dict(self.env)
        env.update(extra)
        return Evaluator(env, self.npts)


def batched_inverse(mats: np.ndarray, ev: Evaluator | None = None) -> np.ndarray:
    """Per-point inverse by LU (numpy), with singularity error and conditioning warning."""
    try:
        cond = np.linalg.cond(mats)
    except np.linalg.LinAlgError:
        cond = np.full(mats.shape[0], np.inf)
    bad = ~np.isfinite(cond) | (cond > 1e15)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise SingularMatrixError("singular matrix", ev.point(k) if ev else None)
    if np.any(cond > COND_WARN):
        warnings.warn(f"ill-conditioned matrix (cond={cond.max():.3g})", IllConditionedWarning, stacklevel=3)
    return np.linalg.inv(mats)


def evaluate_many(exprs: Sequence[Expr], env: Mapping[str, np.ndarray | float]) -> np.ndarray:
    ev = Evaluator(env)
    return np.stack([ev.eval(as_expr(e)) for e in exprs]) if exprs else np.zeros((0, ev.npts))


def evaluate(e: Expr, pt, symbols: SymbolTable | None = None) -> float | np.ndarray:
    """Evaluate at a point (mapping name -> value, or a sequence ordered as ``symbols``).

    Array-valued inputs evaluate over all points at once.
    """
    env = _as_env(pt, symbols)
    ev = Evaluator(env)
    out = ev.eval(as_expr(e))
    scalar = all(np.ndim(v) == 0 for v in env.values())
    return float(out[0]) if scalar else out


def _as_env(pt, symbols):
    if isinstance(pt, Mapping):
        return dict(pt)
    if symbols is None:
        raise ValueError("a SymbolTable is needed to interpret a positional point")
    arr = np.asarray(pt, dtype=float)
    if arr.shape[-1] != len(symbols):
        raise ValueError(f"point has {arr.shape[-1]} values, expected {len(symbols)}")
    if arr.ndim == 1:
        return {n: arr[k] for k, n in enumerate(symbols.names)}
    return {n: arr[:, k] for k, n in enumerate(symbols.names)}


# ---------------------------------------------------------------------------
# rendering and parsing


def render(e: Expr) -> str:
    """Fully parenthesized DSL text; ``parse(render(e))`` rebuilds the same node."""
    op = e.op
    if op == "const":
        v = e.data
        s = repr(v)
        return f"({s})" if v < 0 else s
    if op == "var":
        return e.data
    if op == "neg":
        return f"(-{render(e.args[0])})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}.get(op)
    if sym:
        return f"({render(e.args[0])} {sym} {render(e.args[1])})"
    if op == "func":
        return f"{e.data}({render(e.args[0])})"
    raise ValueError(f"{op} nodes have no DSL form")


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()\[\]]))")


def _tokenize(text: str):
    pos = 0
    toks = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        mt = _TOKEN_RE.match(text, pos)
        if not mt or mt.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        start = mt.start(mt.lastgroup)
        toks.append((mt.lastgroup, mt.group(mt.lastgroup), start))
        pos = mt.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, symbols: SymbolTable | None):
        self.toks = _tokenize(text)
        self.k = 0
        self.symbols = symbols

    def peek(self):
        return self.toks[self.k]

    def take(self, kind=None, value=None):
        tok = self.toks[self.k]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of input"
            raise ParseError(f"expected {want!r}, got {got!r}", tok[2])
        self.k += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            o = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if o == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            o, pos = self.take()[1:]
            rhs = self.unary()
            if o == "*":
                e = mul(e, rhs)
            else:
                try:
                    e = div(e, rhs)
                except DomainError:
                    raise ParseError("division by constant zero", pos) from None
        return e

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        if self.peek()[0] == "op" and self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            pos = self.take()[2]
            exponent = self.unary()  # right-associative, allows x^-2
            try:
                return power(base, exponent)
            except DomainError as err:
                raise ParseError(str(err), pos) from None
        return base

    def atom(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            return const(float(val))
        if kind == "name":
            self.take()
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in FUNCS:
                    raise ParseError(f"unknown function {val!r}", pos)
                self.take("op", "(")
                arg = self.expr()
                self.take("op", ")")
                try:
                    return func(val, arg)
                except DomainError as err:
                    raise ParseError(str(err), pos) from None
            if self.peek()[1] == "[" and self.peek()[0] == "op":
                self.take("op", "[")
                idx = self.take("num")
                if not idx[1].isdigit():
                    raise ParseError("index must be a positive integer", idx[2])
                self.take("op", "]")
                name = f"{val}[{int(idx[1])}]"
                if self.symbols is not None and name not in self.symbols:
                    raise UndeclaredVariableError(name)
                return var(name)
            if val == "pi":
                return const(math.pi)
            raise ParseError(f"bare name {val!r} (variables are written name[index])", pos)
        if kind == "op" and val == "(":
            self.take()
            e = self.expr()
            self.take("op", ")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str, symbols: SymbolTable | None = None) -> Expr:
    """Parse DSL text.  Precedence ^ > unary minus > * / > + -; ^ is right-associative."""
    if not isinstance(text, str):
        if isinstance(text, (int, float)):
            return const(text)
        raise ParseError(f"expected expression text, got {type(text).__name__}", 0)
    return _Parser(text, symbols).parse()


def structurally_equal(a: Expr, b: Expr) -> bool:
    if a is b:
        return True
    if a.op != b.op or a.data != b.data or len(a.args) != len(b.args):
        return False
    return all(structurally_equal(x, y) for x, y in zip(a.args, b.args))


@dataclass
class Point:
    """Coordinate values in symbol-table order."""

    symbols: SymbolTable
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != len(self.symbols):
            raise ValueError("point length must equal the declared coordinate count")

    def as_env(self) -> dict:
        return _as_env(self.values, self.symbols)


# ---------------------------------------------------------------------------
# straight-line code generation for fast scalar evaluation (ODE right-hand sides)


def _topo(exprs: Sequence[Expr]) -> list[Expr]:
    order: list[Expr] = []
    seen: set[int] = set()
    for root in exprs:
        stack = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if id(node) in seen:
                continue
            if ready:
                seen.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            for a in node.args:
                if id(a) not in seen:
                    stack.append((a, False))
    return order


def _small_inv(n: int, entries: list[float]):
    if n == 1:
        if entries[0] == 0.0:
            raise SingularMatrixError("singular 1x1 matrix")
        return ((1.0 / entries[0],),)
    if n == 2:
        a, b, c, d_ = entries
        det = a * d_ - b * c
        scale = max(abs(a), abs(b), abs(c), abs(d_))
        if det == 0.0 or abs(det) <= 1e-15 * scale * scale:
            raise SingularMatrixError("singular 2x2 matrix")
        return ((d_ / det, -b / det), (-c / det, a / det))
    mat = np.array(entries).reshape(n, n)
    if np.linalg.cond(mat) > 1e15:
        raise SingularMatrixError("singular matrix")
    return tuple(tuple(row) for row in np.linalg.inv(mat))


_SCALAR_FUNCS = {"sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp, "log": math.log,
                 "sqrt": math.sqrt, "sinh": math.sinh, "cosh": math.cosh}


class CompiledFunction:
    """exprs compiled to straight-line Python over a flat value vector ordered as ``names``."""

    def __init__(self, exprs: Sequence[Expr], names: Sequence[str]):
        self.exprs = [as_expr(e) for e in exprs]
        self.names = tuple(names)
        self._roots: dict[int, tuple] = {}
        self._last: dict[int, tuple] = {}
        self._fn = self._build()

    def _build(self):
        index = {n: k for k, n in enumerate(self.names)}
        order = _topo(self.exprs)
        lines = ["def _f(v):"]
        local: dict[int, str] = {}
        inv_done: dict[tuple, str] = {}
        glb = {"_inv": _small_inv, "_pow": math.pow, "_root": self._solve_root}
        glb.update({f"_{k}": f for k, f in _SCALAR_FUNCS.items()})
        for k, node in enumerate(order):
            name = f"t{k}"
            op = node.op
            a = [local[id(x)] for x in node.args]
            if op == "const":
                local[id(node)] = repr(node.data)
                continue
            if op == "var":
                if node.data not in index:
                    raise UndeclaredVariableError(node.data)
                code = f"v[{index[node.data]}]"
            elif op == "neg":
                code = f"-{a[0]}"
            elif op == "add":
                code = f"{a[0]} + {a[1]}"
            elif op == "sub":
                code = f"{a[0]} - {a[1]}"
            elif op == "mul":
                code = f"{a[0]} * {a[1]}"
            elif op == "div":
                code = f"{a[0]} / {a[1]}"
            elif op == "pow":
                b = node.args[1]
                if b.op == "const" and b.data == 2.0:
                    code = f"{a[0]} * {a[0]}"
                elif b.op == "const" and b.data == int(b.data) and abs(b.data) <= 8:
                    code = f"{a[0]} ** {int(b.data)}"
                else:
                    code = f"_pow({a[0]}, {a[1]})"
            elif op == "func":
                code = f"_{node.data}({a[0]})"
            elif op == "inv":
                n, i, j = node.data
                key = tuple(id(x) for x in node.args)
                mname = inv_done.get(key)
                if mname is None:
                    mname = f"m{k}"
                    lines.append(f"    {mname} = _inv({n}, [{', '.join(a)}])")
                    inv_done[key] = mname
                code = f"{mname}[{i}][{j}]"
            elif op == "root":
                system, comp = node.data
                if system.uid not in self._roots:
                    outer = sorted(free_vars(Expr("root", (), (system, 0))))
                    for nme in outer:
                        if nme not in index:
                            raise UndeclaredVariableError(nme)
                    self._roots[system.uid] = (system, outer, None, None)
                outer = self._roots[system.uid][1]
                args = ", ".join(f"v[{index[nme]}]" for nme in outer)
                code = f"_root({system.uid}, ({args}{',' if len(outer) == 1 else ''}))[{comp}]"
            else:  # pragma: no cover
                raise ValueError(op)
            lines.append(f"    {name} = {code}")
            local[id(node)] = name
        lines.append(f"    return ({', '.join(local[id(e)] for e in self.exprs)}{',' if len(self.exprs) == 1 else ''})")
        src = "\n".join(lines)
        ns: dict = {}
        exec(compile(src, "<gla-compiled>", "exec"), glb, ns)
        self.source = src
        return ns["_f"]

    def _solve_root(self, uid: int, outer_vals: tuple):
        last = self._last.get(uid)
        if last is not None and last[0] == outer_vals:
            return last[1]
        sol = self._newton(uid, outer_vals)
        self._last[uid] = (outer_vals, sol)
        return sol

    def _newton(self, uid: int, outer_vals: tuple):
        system, outer, fres, fjac = self._roots[uid][:4]
        if fres is None:
            names = list(outer) + list(system.unknowns)
            fres = CompiledFunction(system.residuals, names)
            fjac = CompiledFunction([j for row in system.jacobian for j in row], names)
            fguess = CompiledFunction(system.guesses, outer)
            self._roots[uid] = (system, outer, fres, fjac, fguess)
        fguess = self._roots[uid][4]
        n = len(system.unknowns)
        u = np.array(fguess.raw(list(outer_vals)), dtype=float)
        base = list(outer_vals)
        r = np.array(fres.raw(base + list(u)))
        for _ in range(system.max_iter):
            if np.max(np.abs(r)) <= system.tol * (1.0 + np.max(np.abs(u))):
                return tuple(u)
            J = np.array(fjac.raw(base + list(u))).reshape(n, n)
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                raise NewtonError("singular Jacobian in fiber solve", dict(zip(outer, outer_vals))) from None
            alpha = 1.0
            rn = np.max(np.abs(r))
            for _half in range(30):
                trial = u + alpha * step
                try:
                    r_new = np.array(fres.raw(base + list(trial)))
                    if np.max(np.abs(r_new)) <= rn * (1 - 1e-4 * alpha) or rn <= system.tol:
                        break
                except (ValueError, ZeroDivisionError, OverflowError, NumericalError):
                    r_new = None
                alpha *= 0.5
            if r_new is None:
                raise NewtonError("fiber solve left the domain", dict(zip(outer, outer_vals)))
            u, r = trial, r_new
        if np.max(np.abs(r)) <= 10 * system.tol * (1.0 + np.max(np.abs(u))):
            return tuple(u)
        raise NewtonError(f"Newton did not converge in {system.max_iter} iterations", dict(zip(outer, outer_vals)))

    def raw(self, values):
        return self._fn(values)

    def __call__(self, values) -> np.ndarray:
        vals = [float(x) for x in values]
        try:
            out = self._fn(vals)
        except (ValueError, ZeroDivisionError, OverflowError) as err:
            raise DomainError(f"evaluation failed ({err})", dict(zip(self.names, vals))) from None
        arr = np.array(out, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise DomainError("non-finite value", dict(zip(self.names, vals)))
        return arr


def compile_exprs(exprs: Sequence[Expr], names: Sequence[str]) -> CompiledFunction:
    return CompiledFunction(exprs, names)
