"""Generalized Lie algebroids, their brackets and anchors, and the generalized tangent bundle.

Everything below reduces to one engine, :class:`FrameAlgebroid`: a frame
e_1..e_K over a coordinate chart with an anchor (each e_k acts on scalar
fields as a derivation) and structure functions [e_i, e_j] = C^k_ij e_k.
The algebroid on N, its pull-back to M and the generalized tangent bundle
over E (or E*) are all instances.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, ZERO, ONE
from .report import CheckReport, eval_all, random_vector, random_poly, sample_env, rng_for


class ConfigurationError(ValueError):
    """Inconsistent or malformed input data (shapes, symmetry, inverse maps)."""


Structure = dict  # {(k, i, j): Expr}, 0-based, missing entries are zero


class Section(tuple):
    """Components z^alpha of a section in the algebroid frame."""

    def __new__(cls, comps):
        return super().__new__(cls, tuple(ex.as_expr(c) for c in comps))


@dataclass
class GTBSection:
    """Z^alpha d/dz^alpha + Y^a d/dy^a (or Y_a d/dp_a on the dual bundle)."""

    horizontal: tuple
    vertical: tuple

    def __post_init__(self):
        self.horizontal = tuple(ex.as_expr(c) for c in self.horizontal)
        self.vertical = tuple(ex.as_expr(c) for c in self.vertical)

    @property
    def components(self) -> list[Expr]:
        return list(self.horizontal) + list(self.vertical)

    @classmethod
    def split(cls, comps: Sequence, p: int) -> "GTBSection":
        comps = list(comps)
        return cls(tuple(comps[:p]), tuple(comps[p:]))


class FrameAlgebroid:
    """Anchored frame with structure functions over a coordinate chart.

    ``anchor[k][j]`` is the d/d(coords[j]) component of the vector field
    attached to e_k; ``structure[(k, i, j)]`` is C^k_ij.
    """

    def __init__(self, coords: Sequence[str], anchor: Sequence[Sequence], structure: Mapping | None = None,
                 name: str = ""):
        self.coords = tuple(coords)
        self.anchor = [[ex.as_expr(a) for a in row] for row in anchor]
        self.rank = len(self.anchor)
        if any(len(row) != len(self.coords) for row in self.anchor):
            raise ConfigurationError("anchor rows must have one entry per coordinate")
        self.structure: dict = {}
        for (k, i, j), c in (structure or {}).items():
            c = ex.as_expr(c)
            if not ex.is_zero(c):
                if not all(0 <= t < self.rank for t in (k, i, j)):
                    raise ConfigurationError(f"structure index {(k, i, j)} out of range")
                self.structure[(k, i, j)] = c
        self.name = name
        self._act: dict = {}
        self._by_pair: dict = {}
        for (k, i, j), c in self.structure.items():
            self._by_pair.setdefault((i, j), []).append((k, c))

    def C(self, k: int, i: int, j: int) -> Expr:
        return self.structure.get((k, i, j), ZERO)

    def act(self, k: int, f: Expr) -> Expr:
        """Anchor of e_k applied to the scalar field f."""
        key = (k, id(f))
        hit = self._act.get(key)
        if hit is None:
            hit = ex.add_all(ex.mul(a, ex.differentiate(f, c))
                             for a, c in zip(self.anchor[k], self.coords) if not ex.is_zero(a))
            self._act[key] = (hit, f)
            return hit
        return hit[0]

    def act_vec(self, u: Sequence[Expr], f: Expr) -> Expr:
        return ex.add_all(ex.mul(uk, self.act(k, f)) for k, uk in enumerate(u) if not ex.is_zero(uk))

    def basis(self, k: int) -> list[Expr]:
        return [ONE if i == k else ZERO for i in range(self.rank)]

    def bracket(self, u: Sequence, v: Sequence) -> list[Expr]:
        u = [ex.as_expr(c) for c in u]
        v = [ex.as_expr(c) for c in v]
        if len(u) != self.rank or len(v) != self.rank:
            raise ConfigurationError("section length does not match the frame rank")
        terms: list[list[Expr]] = [[] for _ in range(self.rank)]
        for (i, j), lst in self._by_pair.items():
            if ex.is_zero(u[i]) or ex.is_zero(v[j]):
                continue
            uv = ex.mul(u[i], v[j])
            for k, c in lst:
                terms[k].append(ex.mul(uv, c))
        for k in range(self.rank):
            terms[k].append(self.act_vec(u, v[k]))
            terms[k].append(ex.neg(self.act_vec(v, u[k])))
        return [ex.add_all(t) for t in terms]

    def vector_field(self, u: Sequence[Expr]) -> list[Expr]:
        """Image of a section under the anchor, as components along d/d(coords)."""
        return [ex.add_all(ex.mul(ex.as_expr(u[k]), self.anchor[k][j]) for k in range(self.rank))
                for j in range(len(self.coords))]

    def field_bracket(self, X: Sequence[Expr], Y: Sequence[Expr]) -> list[Expr]:
        """Ordinary Lie bracket of vector fields on the chart."""
        out = []
        for j in range(len(self.coords)):
            out.append(ex.add_all(
                [ex.mul(X[i], ex.differentiate(Y[j], c)) for i, c in enumerate(self.coords)]
                + [ex.neg(ex.mul(Y[i], ex.differentiate(X[j], c))) for i, c in enumerate(self.coords)]))
        return out

    def change_frame(self, P: Sequence[Sequence], Pinv: Sequence[Sequence], name: str = "") -> "FrameAlgebroid":
        """New frame f_i = P[i][k] e_k; ``Pinv`` must be the inverse matrix of ``P``."""
        K = self.rank
        P = [[ex.as_expr(a) for a in row] for row in P]
        Pinv = [[ex.as_expr(a) for a in row] for row in Pinv]
        anchor = [[ex.add_all(ex.mul(P[i][k], self.anchor[k][j]) for k in range(K)) for j in range(len(self.coords))]
                  for i in range(K)]
        structure = {}
        for i in range(K):
            for j in range(i + 1, K):
                br = self.bracket(P[i], P[j])  # components in the old frame
                for n in range(K):
                    c = ex.add_all(ex.mul(br[m], Pinv[m][n]) for m in range(K))
                    if not ex.is_zero(c):
                        structure[(n, i, j)] = c
                        structure[(n, j, i)] = ex.neg(c)
        return FrameAlgebroid(self.coords, anchor, structure, name or self.name)

    # residual helpers -----------------------------------------------------
    def jacobi(self, u, v, w) -> list[Expr]:
        a = self.bracket(u, self.bracket(v, w))
        b = self.bracket(v, self.bracket(w, u))
        c = self.bracket(w, self.bracket(u, v))
        return [ex.add_all(t) for t in zip(a, b, c)]

    def leibniz(self, u, f, v) -> list[Expr]:
        lhs = self.bracket(u, [ex.mul(f, c) for c in v])
        rhs = self.bracket(u, v)
        af = self.act_vec(u, f)
        return [ex.sub(l, ex.add(ex.mul(f, r), ex.mul(af, vk))) for l, r, vk in zip(lhs, rhs, v)]

    def anchor_morphism(self, u, v) -> list[Expr]:
        lhs = self.vector_field(self.bracket(u, v))
        rhs = self.field_bracket(self.vector_field(u), self.vector_field(v))
        return [ex.sub(a, b) for a, b in zip(lhs, rhs)]

    def antisymmetry(self) -> list[Expr]:
        out = []
        for (k, i, j), c in self.structure.items():
            out.append(ex.add(c, self.C(k, j, i)))
        return out


# ---------------------------------------------------------------------------
# generalized Lie algebroid


@dataclass
class GeneralizedLieAlgebroid:
    """((F, nu, N), [,]_{F,h}, (rho, eta)) in coordinates.

    ``anchor[alpha][i]`` = rho^i_alpha over N; ``structure[(gamma, alpha, beta)]`` = L^gamma_{alpha beta}
    over N; ``h`` maps M -> N (n Exprs over x), ``eta`` maps N -> M (m Exprs over N coordinates).
    When N = M the N coordinates are the x names themselves.
    """

    m: int
    n: int
    p: int
    anchor: list
    structure: dict
    h: list
    eta: list
    domain_box: dict = field(default_factory=dict)
    name: str = ""
    base_names: tuple = ()
    n_names: tuple = ()

    def __post_init__(self):
        if not self.base_names:
            self.base_names = tuple(f"x[{i}]" for i in range(1, self.m + 1))
        if not self.n_names:
            self.n_names = self.base_names if self.n == self.m else tuple(f"z[{i}]" for i in range(1, self.n + 1))
        self.anchor = [[ex.as_expr(a) for a in row] for row in self.anchor]
        self.structure = {k: ex.as_expr(v) for k, v in self.structure.items() if not ex.is_zero(ex.as_expr(v))}
        self.h = [ex.as_expr(e) for e in self.h]
        self.eta = [ex.as_expr(e) for e in self.eta]
        if len(self.anchor) != self.p or any(len(r) != self.m for r in self.anchor):
            raise ConfigurationError(f"anchor must be {self.p}x{self.m}")
        if len(self.h) != self.n or len(self.eta) != self.m:
            raise ConfigurationError("h needs n components and eta needs m components")
        for (g, a, b) in self.structure:
            if not all(0 <= t < self.p for t in (g, a, b)):
                raise ConfigurationError(f"structure index {(g + 1, a + 1, b + 1)} out of range")
        self._AN = None
        self._AM = None
        self._gtb: dict = {}

    @property
    def same_base(self) -> bool:
        return tuple(self.n_names) == tuple(self.base_names)

    def L(self, g: int, a: int, b: int) -> Expr:
        return self.structure.get((g, a, b), ZERO)

    def compose_h(self, f: Expr) -> Expr:
        """f o h: a field on N pulled back to M."""
        return ex.substitute(f, dict(zip(self.n_names, self.h)))

    def compose_eta(self, f: Expr) -> Expr:
        """f o eta: a field on M pulled back to N."""
        return ex.substitute(f, dict(zip(self.base_names, self.eta)))

    def theta(self) -> list[list[Expr]]:
        """theta^k_alpha = rho^i_alpha * (d h^k / d x^i) o eta, the anchor acting on N."""
        dh = [[ex.differentiate(hk, xi) for xi in self.base_names] for hk in self.h]
        dh_eta = [[self.compose_eta(d) for d in row] for row in dh]
        return [[ex.add_all(ex.mul(self.anchor[a][i], dh_eta[k][i]) for i in range(self.m))
                 for k in range(self.n)] for a in range(self.p)]

    @property
    def on_N(self) -> FrameAlgebroid:
        if self._AN is None:
            self._AN = FrameAlgebroid(self.n_names, self.theta(), self.structure, self.name + ":N")
        return self._AN

    @property
    def on_M(self) -> FrameAlgebroid:
        """Anchor rho o h and structure L o h acting on fields over M."""
        if self._AM is None:
            anchor = [[self.compose_h(a) for a in row] for row in self.anchor]
            structure = {k: self.compose_h(v) for k, v in self.structure.items()}
            self._AM = FrameAlgebroid(self.base_names, anchor, structure, self.name + ":M")
        return self._AM

    def rho_h(self, a: int, i: int) -> Expr:
        return self.on_M.anchor[a][i]

    def L_h(self, g: int, a: int, b: int) -> Expr:
        return self.on_M.C(g, a, b)

    def sample(self, npts: int, rng: np.random.Generator, names: Sequence[str] | None = None) -> dict:
        names = names or tuple(dict.fromkeys(self.base_names + tuple(self.n_names)))
        return sample_env(self.domain_box, names, npts, rng)


def bracket(gla: GeneralizedLieAlgebroid, u: Sequence, v: Sequence) -> Section:
    """[u, v]_{F,h} for sections over N."""
    if len(u) != gla.p or len(v) != gla.p:
        raise ConfigurationError(f"sections must have {gla.p} components")
    return Section(gla.on_N.bracket(u, v))


def anchor_apply(gla: GeneralizedLieAlgebroid, u: Sequence, f: Expr) -> Expr:
    """Gamma(Th o rho, h o eta)(u)(f) for f over N."""
    if len(u) != gla.p:
        raise ConfigurationError(f"section must have {gla.p} components")
    return gla.on_N.act_vec([ex.as_expr(c) for c in u], ex.as_expr(f))


def anchor_compatibility(gla: GeneralizedLieAlgebroid) -> list[Expr]:
    """Residual components of (L o h)(rho o h) = (rho o h) d(rho o h) - (rho o h) d(rho o h)."""
    AM = gla.on_M
    out = []
    for a in range(gla.p):
        for b in range(a + 1, gla.p):
            for k in range(gla.m):
                lhs = ex.add_all(ex.mul(AM.C(g, a, b), AM.anchor[g][k]) for g in range(gla.p))
                rhs = ex.sub(AM.act(a, AM.anchor[b][k]), AM.act(b, AM.anchor[a][k]))
                out.append(ex.sub(lhs, rhs))
    return out


def validate(gla: GeneralizedLieAlgebroid, samples: int = 200, seed: int = 0, tol: float = 1e-9,
             n_sections: int = 5) -> CheckReport:
    """Antisymmetry, Leibniz (GLA1), Jacobi (GLA2) and anchor compatibility (GLA3) on samples."""
    rng = rng_for(seed)
    rep = CheckReport(f"validate {gla.name}".strip())
    env = gla.sample(samples, rng)
    ev = ex.Evaluator(env)
    AN = gla.on_N
    names = gla.n_names

    anti = [ex.add(gla.L(g, a, b), gla.L(g, b, a)) for g in range(gla.p) for a in range(gla.p)
            for b in range(a, gla.p)]
    rep.add("antisymmetry", eval_all(anti, ev), tol)

    leib, jac = [], []
    for _ in range(n_sections):
        u, v, w = (random_vector(names, gla.p, rng) for _ in range(3))
        f = random_poly(names, rng)
        leib += AN.leibniz(u, f, v)
        jac += AN.jacobi(u, v, w)
    for k in range(gla.p):
        for a in range(gla.p):
            for b in range(a + 1, gla.p):
                jac += AN.jacobi(AN.basis(k), AN.basis(a), AN.basis(b))
    rep.add("leibniz", eval_all(leib, ev), tol)
    rep.add("jacobi", eval_all(jac, ev), tol)
    rep.add("anchor_compatibility", eval_all(anchor_compatibility(gla), ev), tol)
    return rep


# ---------------------------------------------------------------------------
# constructions


def from_lie_algebroid(la: GeneralizedLieAlgebroid, hmap: Sequence) -> GeneralizedLieAlgebroid:
    """Generalized Lie algebroid obtained from a Lie algebroid (h = id) and a map h: N -> N.

    The returned data carry rho o h and L o h with eta = id.  The GLA axioms
    are exact for translations (constant Jacobian of h); other maps are
    accepted and left to ``validate``.
    """
    if not (la.same_base and all(e is ex.var(x) for e, x in zip(la.h, la.base_names))):
        raise ConfigurationError("from_lie_algebroid expects a Lie algebroid with N = M and h = id")
    hmap = [ex.as_expr(e) for e in hmap]
    if len(hmap) != la.m:
        raise ConfigurationError("hmap must have m components")
    if all(e is ex.var(x) for e, x in zip(hmap, la.base_names)):
        return la
    sub = dict(zip(la.base_names, hmap))
    return GeneralizedLieAlgebroid(
        la.m, la.n, la.p,
        [[ex.substitute(a, sub) for a in row] for row in la.anchor],
        {k: ex.substitute(v, sub) for k, v in la.structure.items()},
        hmap, [ex.var(x) for x in la.base_names], dict(la.domain_box), la.name + "_h", la.base_names)


def tm_h_algebroid(gmap: Sequence, hmap: Sequence, inverse: Sequence, m: int | None = None,
                   domain_box: Mapping | None = None, tol: float = 1e-9, samples: int = 50, seed: int = 0,
                   name: str = "tm_h") -> GeneralizedLieAlgebroid:
    """(TM, [,]_{TM,h}, (Tg, g)) on the coordinate frame.

    ``inverse`` is the supplied inverse k of h o g (Exprs over x); it is checked on samples.
    theta = D(h o g) and its inverse is D(k) evaluated at (h o g)(x).
    """
    gmap = [ex.as_expr(e) for e in gmap]
    hmap = [ex.as_expr(e) for e in hmap]
    inverse = [ex.as_expr(e) for e in inverse]
    m = m or len(gmap)
    xs = tuple(f"x[{i}]" for i in range(1, m + 1))
    box = dict(domain_box or {})
    hg = [ex.substitute(hk, dict(zip(xs, gmap))) for hk in hmap]
    # inverse residual k(hg(x)) - x
    rng = rng_for(seed)
    env = sample_env(box, xs, samples, rng)
    ev = ex.Evaluator(env)
    kk = [ex.substitute(k, dict(zip(xs, hg))) for k in inverse]
    res = eval_all([ex.sub(k, ex.var(x)) for k, x in zip(kk, xs)], ev)
    if np.max(np.abs(res)) > tol:
        raise ConfigurationError(f"supplied inverse of h o g has residual {np.max(np.abs(res)):.3e} > {tol:g}")
    theta = [[ex.differentiate(hg[i], xs[a]) for i in range(m)] for a in range(m)]  # theta[alpha][i]
    dk = [[ex.differentiate(inverse[g], xs[j]) for j in range(m)] for g in range(m)]
    theta_t = [[ex.substitute(dk[g][j], dict(zip(xs, hg))) for j in range(m)] for g in range(m)]  # [gamma][j]
    structure = {}
    for a in range(m):
        for b in range(a + 1, m):
            vec = [ex.add_all([ex.mul(theta[a][i], ex.differentiate(theta[b][j], xs[i])) for i in range(m)]
                              + [ex.neg(ex.mul(theta[b][i], ex.differentiate(theta[a][j], xs[i])))
                                 for i in range(m)]) for j in range(m)]
            for g in range(m):
                c = ex.add_all(ex.mul(vec[j], theta_t[g][j]) for j in range(m))
                if not ex.is_zero(c):
                    structure[(g, a, b)] = c
                    structure[(g, b, a)] = ex.neg(c)
    anchor = [[ex.differentiate(gmap[i], xs[a]) for i in range(m)] for a in range(m)]
    return GeneralizedLieAlgebroid(m, m, m, anchor, structure, hmap, gmap, box, name, xs)


def lie_algebroid(anchor, structure, m: int, p: int, domain_box=None, name: str = "") -> GeneralizedLieAlgebroid:
    """Lie algebroid regarded as a generalized one (N = M, h = eta = id)."""
    xs = [ex.var(f"x[{i}]") for i in range(1, m + 1)]
    return GeneralizedLieAlgebroid(m, m, p, anchor, structure, xs, xs, dict(domain_box or {}), name)


# ---------------------------------------------------------------------------
# generalized tangent bundle


@dataclass(frozen=True)
class VectorBundleSpec:
    rank: int

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigurationError("bundle rank must be >= 1")


def fiber_names(r: int, dual: bool = False) -> tuple[str, ...]:
    letter = "p" if dual else "y"
    return tuple(f"{letter}[{a}]" for a in range(1, r + 1))


def gtb(gla: GeneralizedLieAlgebroid, r: int | VectorBundleSpec, dual: bool = False) -> FrameAlgebroid:
    """Lie algebroid generalized tangent bundle (rho, eta)TE over coordinates (x, y) or (x, p).

    Natural frame (d~/dz^alpha, d/dy^a): anchor (rho o h o pi) d/dx on the first block,
    d/dy^a on the second; horizontal structure L o h o pi, everything else zero.
    """
    if isinstance(r, VectorBundleSpec):
        r = r.rank
    if not gla.same_base:
        raise ConfigurationError("the generalized tangent bundle needs N = M")
    hit = gla._gtb.get((r, dual))
    if hit is not None:
        return hit
    AM = gla.on_M
    ys = fiber_names(r, dual)
    coords = tuple(gla.base_names) + ys
    p, m = gla.p, gla.m
    anchor = []
    for a in range(p):
        anchor.append(list(AM.anchor[a]) + [ZERO] * r)
    for b in range(r):
        anchor.append([ZERO] * m + [ONE if c == b else ZERO for c in range(r)])
    T = FrameAlgebroid(coords, anchor, dict(AM.structure), f"{gla.name}:{'TE*' if dual else 'TE'}")
    gla._gtb[(r, dual)] = T
    return T


def gtb_bracket(gla: GeneralizedLieAlgebroid, bundle: VectorBundleSpec | int, U: GTBSection, V: GTBSection,
                dual: bool = False) -> GTBSection:
    T = gtb(gla, bundle, dual)
    if len(U.horizontal) != gla.p or len(V.horizontal) != gla.p:
        raise ConfigurationError("horizontal components must number p")
    r = T.rank - gla.p
    if len(U.vertical) != r or len(V.vertical) != r:
        raise ConfigurationError("vertical components must number r")
    return GTBSection.split(T.bracket(U.components, V.components), gla.p)


def warn_surjectivity(gla: GeneralizedLieAlgebroid, samples: int = 200, seed: int = 0) -> bool:
    """Best-effort check that h o eta has full-rank Jacobian on the box; warns only."""
    rng = rng_for(seed)
    env = gla.sample(samples, rng, gla.base_names)
    ev = ex.Evaluator(env)
    jac = eval_all([ex.differentiate(h, x) for h in gla.h for x in gla.base_names], ev)
    jac = jac.T.reshape(samples, gla.n, gla.m)
    ranks = np.linalg.matrix_rank(jac)
    ok = bool(np.all(ranks == gla.n))
    if not ok:
        warnings.warn(f"h is not a submersion at some sampled points of {gla.name}", stacklevel=2)
    return ok
