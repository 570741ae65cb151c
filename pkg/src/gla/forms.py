"""Exterior differential calculus over an anchored frame.

Forms are stored on strictly increasing multi-indices.  The wedge product
uses the shuffle convention, so a wedge of coframe elements evaluated on
frame elements is a determinant (integer valued on basis tuples).
"""
from __future__ import annotations

import itertools
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, ZERO
from .algebroid import FrameAlgebroid, GeneralizedLieAlgebroid, ConfigurationError
from .report import CheckReport, eval_all, rng_for, random_poly, random_vector


def _alg(a) -> FrameAlgebroid:
    if isinstance(a, GeneralizedLieAlgebroid):
        return a.on_N
    return a


def perm_sign(seq: Sequence[int]) -> int:
    """Sign of the permutation sorting ``seq`` (0 if an index repeats)."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


class ExteriorForm:
    """q-form with components omega_I on increasing multi-indices I."""

    def __init__(self, alg, degree: int, comps: Mapping | None = None):
        self.alg = _alg(alg)
        self.degree = degree
        if degree < 0 or degree > self.alg.rank:
            raise ConfigurationError(f"degree {degree} out of range for rank {self.alg.rank}")
        self.comps: dict[tuple, Expr] = {}
        for idx, c in (comps or {}).items():
            idx = tuple(idx)
            if len(idx) != degree:
                raise ConfigurationError("multi-index length must equal the degree")
            s = perm_sign(idx)
            if s == 0:
                continue
            key = tuple(sorted(idx))
            c = ex.as_expr(c) if s > 0 else ex.neg(ex.as_expr(c))
            self.comps[key] = ex.add(self.comps.get(key, ZERO), c)
        self.comps = {k: v for k, v in self.comps.items() if not ex.is_zero(v)}

    def __getitem__(self, idx) -> Expr:
        idx = tuple(idx)
        s = perm_sign(idx)
        if s == 0:
            return ZERO
        c = self.comps.get(tuple(sorted(idx)), ZERO)
        return c if s > 0 else ex.neg(c)

    def __add__(self, other: "ExteriorForm") -> "ExteriorForm":
        _same(self, other)
        keys = set(self.comps) | set(other.comps)
        return ExteriorForm(self.alg, self.degree, {k: ex.add(self[k], other[k]) for k in keys})

    def __sub__(self, other: "ExteriorForm") -> "ExteriorForm":
        return self + other.scale(-1.0)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, f) -> "ExteriorForm":
        f = ex.as_expr(f)
        return ExteriorForm(self.alg, self.degree, {k: ex.mul(f, v) for k, v in self.comps.items()})

    def indices(self):
        return itertools.combinations(range(self.alg.rank), self.degree)

    def components(self) -> list[Expr]:
        """All increasing-index components in lexicographic order (zeros included)."""
        return [self[I] for I in self.indices()]

    def __call__(self, *sections) -> Expr:
        return evaluate_on(self, sections)

    def __repr__(self):
        return f"ExteriorForm(degree={self.degree}, nonzero={len(self.comps)})"


def _same(a: ExteriorForm, b: ExteriorForm):
    if a.alg is not b.alg:
        raise ConfigurationError("forms live on different algebroids")
    if a.degree != b.degree:
        raise ConfigurationError("degree mismatch")


def zero_form(alg, f) -> ExteriorForm:
    return ExteriorForm(alg, 0, {(): ex.as_expr(f)})


def coframe(alg, k: int) -> ExteriorForm:
    """Dual basis element t^k."""
    return ExteriorForm(alg, 1, {(k,): ex.ONE})


def one_form(alg, comps: Sequence) -> ExteriorForm:
    return ExteriorForm(alg, 1, {(k,): c for k, c in enumerate(comps)})


def evaluate_on(w: ExteriorForm, sections: Sequence[Sequence]) -> Expr:
    """omega(z_1, ..., z_q) = sum_I omega_I det[z_k^{I_l}]."""
    q = w.degree
    if len(sections) != q:
        raise ConfigurationError(f"a {q}-form needs {q} arguments")
    if q == 0:
        return w[()]
    secs = [[ex.as_expr(c) for c in s] for s in sections]
    terms = []
    for I, c in w.comps.items():
        for perm in itertools.permutations(range(q)):
            s = perm_sign(perm)
            factors = [secs[k][I[perm[k]]] for k in range(q)]
            if any(ex.is_zero(f) for f in factors):
                continue
            t = ex.mul(c, ex.mul_all(factors))
            terms.append(t if s > 0 else ex.neg(t))
    return ex.add_all(terms)


def wedge(a: ExteriorForm, b: ExteriorForm) -> ExteriorForm:
    """Shuffle-convention exterior product."""
    if a.alg is not b.alg:
        raise ConfigurationError("forms live on different algebroids")
    q, r = a.degree, b.degree
    if q + r > a.alg.rank:
        raise ConfigurationError(f"degree overflow: {q} + {r} > {a.alg.rank}")
    acc: dict[tuple, list] = {}
    for I, ca in a.comps.items():
        for J, cb in b.comps.items():
            if set(I) & set(J):
                continue
            K = I + J
            s = perm_sign(K)
            t = ex.mul(ca, cb)
            acc.setdefault(tuple(sorted(K)), []).append(t if s > 0 else ex.neg(t))
    return ExteriorForm(a.alg, q + r, {K: ex.add_all(v) for K, v in acc.items()})


def interior(z: Sequence, w: ExteriorForm) -> ExteriorForm:
    """(i_z omega)(z_2, ..., z_q) = omega(z, z_2, ..., z_q); i_z f = 0."""
    q = w.degree
    if q == 0:
        return ExteriorForm(w.alg, 0, {})  # zero 0-form
    z = [ex.as_expr(c) for c in z]
    out = {}
    for J in itertools.combinations(range(w.alg.rank), q - 1):
        terms = [ex.mul(z[k], w[(k,) + J]) for k in range(w.alg.rank) if not ex.is_zero(z[k]) and k not in J]
        c = ex.add_all(terms)
        if not ex.is_zero(c):
            out[J] = c
    return ExteriorForm(w.alg, q - 1, out)


def d(alg, w: ExteriorForm | None = None) -> ExteriorForm:
    """Exterior derivative (Koszul formula on frame elements).

    Accepts ``d(gla_or_frame, omega)`` or ``d(omega)``.
    """
    if w is None:
        w, A = alg, alg.alg
    else:
        A = _alg(alg)
        if A is not w.alg:
            raise ConfigurationError("form does not live on this algebroid")
    q = w.degree
    if q >= A.rank:
        raise ConfigurationError(f"cannot differentiate a top-degree form (q={q})")
    out = {}
    for K in itertools.combinations(range(A.rank), q + 1):
        terms = []
        for i, ki in enumerate(K):
            rest = K[:i] + K[i + 1:]
            c = w[rest]
            if not ex.is_zero(c):
                t = A.act(ki, c)
                terms.append(t if i % 2 == 0 else ex.neg(t))
        for i in range(q + 1):
            for j in range(i + 1, q + 1):
                rest = K[:i] + K[i + 1:j] + K[j + 1:]
                sgn = 1 if (i + j) % 2 == 0 else -1
                for k in range(A.rank):
                    C = A.C(k, K[i], K[j])
                    if ex.is_zero(C):
                        continue
                    c = w[(k,) + rest]
                    if ex.is_zero(c):
                        continue
                    t = ex.mul(C, c)
                    terms.append(t if sgn > 0 else ex.neg(t))
        val = ex.add_all(terms)
        if not ex.is_zero(val):
            out[K] = val
    return ExteriorForm(A, q + 1, out)


def lie_derivative(z: Sequence, w: ExteriorForm) -> ExteriorForm:
    """L_z omega (z_1..z_q) = rho(z)(omega(z_1..z_q)) - sum_i omega(.., [z, z_i], ..)."""
    A = w.alg
    z = [ex.as_expr(c) for c in z]
    q = w.degree
    if q == 0:
        return zero_form(A, A.act_vec(z, w[()]))
    brackets = [A.bracket(z, A.basis(k)) for k in range(A.rank)]
    out = {}
    for K in itertools.combinations(range(A.rank), q):
        terms = [A.act_vec(z, w[K])]
        for i in range(q):
            br = brackets[K[i]]
            for m in range(A.rank):
                if ex.is_zero(br[m]):
                    continue
                idx = K[:i] + (m,) + K[i + 1:]
                c = w[idx]
                if not ex.is_zero(c):
                    terms.append(ex.neg(ex.mul(br[m], c)))
        val = ex.add_all(terms)
        if not ex.is_zero(val):
            out[K] = val
    return ExteriorForm(A, q, out)


def difference(a: ExteriorForm, b: ExteriorForm) -> list[Expr]:
    """Componentwise residual expressions a - b."""
    _same(a, b)
    return [ex.sub(a[I], b[I]) for I in a.indices()]


def random_form(alg, degree: int, rng: np.random.Generator, names: Sequence[str] | None = None) -> ExteriorForm:
    A = _alg(alg)
    names = names or A.coords
    return ExteriorForm(A, degree, {I: random_poly(names, rng)
                                    for I in itertools.combinations(range(A.rank), degree)})


# ---------------------------------------------------------------------------
# identity suites


def _env(gla_or_alg, npts, rng, box=None):
    from .report import sample_env
    if isinstance(gla_or_alg, GeneralizedLieAlgebroid):
        return gla_or_alg.sample(npts, rng, gla_or_alg.n_names)
    return sample_env(box or {}, gla_or_alg.coords, npts, rng)


def maurer_cartan_residual(gla, samples: int = 100, seed: int = 0, tol: float = 1e-9,
                           box: Mapping | None = None) -> CheckReport:
    """C1: d t^a = -1/2 L^a_bc t^b ^ t^c.   C2: d(coordinate) = theta^k_a t^a."""
    A = _alg(gla)
    rng = rng_for(seed)
    ev = ex.Evaluator(_env(gla, samples, rng, box))
    rep = CheckReport("maurer_cartan")
    c1 = []
    for a in range(A.rank):
        expected = ExteriorForm(A, 2, {(b, c): ex.neg(A.C(a, b, c)) for b in range(A.rank)
                                       for c in range(b + 1, A.rank)})
        c1 += difference(d(A, coframe(A, a)), expected)
    c2 = []
    for k, name in enumerate(A.coords):
        expected = one_form(A, [A.anchor[a][k] for a in range(A.rank)])
        c2 += difference(d(A, zero_form(A, ex.var(name))), expected)
    rep.add("C1", eval_all(c1, ev), tol)
    rep.add("C2", eval_all(c2, ev), tol)
    return rep


def cartan_magic_residual(gla, z: Sequence, w: ExteriorForm, samples: int = 100, seed: int = 0,
                          box: Mapping | None = None) -> float:
    A = _alg(gla)
    lhs = lie_derivative(z, w)
    if w.degree == 0:
        rhs = interior(z, d(A, w))
    elif w.degree == A.rank:
        rhs = d(A, interior(z, w))
    else:
        rhs = d(A, interior(z, w)) + interior(z, d(A, w))
    rng = rng_for(seed)
    ev = ex.Evaluator(_env(gla, samples, rng, box))
    res = eval_all(difference(lhs, rhs), ev)
    return float(np.max(np.abs(res))) if res.size else 0.0


def exterior_suite(gla, samples: int = 100, seed: int = 0, n_forms: int = 50, tol_dd: float = 1e-10,
                   tol: float = 1e-9, box: Mapping | None = None) -> CheckReport:
    """d o d = 0, antiderivation, L_z o d = d o L_z, magic formula and the interior commutator."""
    A = _alg(gla)
    rng = rng_for(seed)
    ev = ex.Evaluator(_env(gla, samples, rng, box))
    names = A.coords
    rep = CheckReport(f"exterior {A.name}")
    dd, anti, lied, magic, comm = [], [], [], [], []
    maxdeg = min(2, A.rank - 2)
    for k in range(n_forms):
        q = k % (maxdeg + 1)
        w = random_form(A, q, rng, names)
        dd += d(A, d(A, w)).components()
    for k in range(max(4, n_forms // 10)):
        q = k % 2
        r = (k // 2) % 2
        if q + r + 1 > A.rank:
            q, r = 0, 0
        w1 = random_form(A, q, rng, names)
        w2 = random_form(A, r, rng, names)
        lhs = d(A, wedge(w1, w2))
        rhs = wedge(d(A, w1), w2) + wedge(w1, d(A, w2)).scale((-1.0) ** q)
        anti += difference(lhs, rhs)
        z = random_vector(names, A.rank, rng)
        v = random_vector(names, A.rank, rng)
        if q + 1 <= A.rank:
            lied += difference(lie_derivative(z, d(A, w1)), d(A, lie_derivative(z, w1)))
            lhs = lie_derivative(z, w1)
            rhs = interior(z, d(A, w1)) if q == 0 else d(A, interior(z, w1)) + interior(z, d(A, w1))
            magic += difference(lhs, rhs)
        if q >= 1:
            # L_v i_z - i_z L_v = i_[v,z]
            lhs = lie_derivative(v, interior(z, w1)) - interior(z, lie_derivative(v, w1))
            comm += difference(lhs, interior(A.bracket(v, z), w1))
    rep.add("d_d_zero", eval_all(dd, ev), tol_dd)
    rep.add("antiderivation", eval_all(anti, ev), tol)
    rep.add("lie_commutes_with_d", eval_all(lied, ev), tol)
    rep.add("cartan_magic", eval_all(magic, ev), tol)
    rep.add("interior_commutator", eval_all(comm, ev), tol)
    return rep
