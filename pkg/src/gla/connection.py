"""Connections on generalized Lie algebroids and their derived tensors.

Conventions used throughout:

* A linear connection on an anchored frame ``e_k`` is stored as ``Gamma[k][i][j]``
  with ``D_{e_j} e_i = Gamma^k_ij e_k``.  The generic engine computes
  ``T(e_i, e_j)^k`` as ``torsion()[k][i][j]`` and ``(R(e_i, e_j) e_k)^l`` as
  ``curvature()[l][k][i][j]`` with ``R(X, Y) = [D_X, D_Y] - D_[X,Y]``.
* Nonlinear connections carry components ``Gamma[a][alpha]`` over (x, y); the
  adapted horizontal frame is ``d~_alpha - Gamma^a_alpha d._a`` on E and
  ``d~_alpha + Gamma*_{b alpha} d.^b`` on the dual.
* Index-named block accessors (rho_curvature, d_torsion, d_curvature) follow the
  index placement of the printed component formulas; the generic arrays are the
  second route they are checked against.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, ZERO, ONE
from .algebroid import (ConfigurationError, FrameAlgebroid, GeneralizedLieAlgebroid, GTBSection,
                        fiber_names, gtb)
from .forms import ExteriorForm, coframe, d as ext_d, one_form, wedge, difference
from .report import CheckReport, eval_all, random_vector, rng_for, sample_env


def _zeros(*shape):
    if len(shape) == 1:
        return [ZERO] * shape[0]
    return [_zeros(*shape[1:]) for _ in range(shape[0])]


def _sum(terms) -> Expr:
    return ex.add_all(t for t in terms if not ex.is_zero(t))


def _mat(m) -> list[list[Expr]]:
    return [[ex.as_expr(c) for c in row] for row in m]


# ---------------------------------------------------------------------------
# generic linear connection on an anchored frame


class LinearConnection:
    """Linear connection on a FrameAlgebroid given by Gamma[k][i][j]."""

    def __init__(self, alg: FrameAlgebroid, Gamma):
        self.alg = alg
        K = alg.rank
        self.Gamma = [[[ex.as_expr(Gamma[k][i][j]) for j in range(K)] for i in range(K)] for k in range(K)]
        self._T = None
        self._R = None

    @property
    def rank(self) -> int:
        return self.alg.rank

    def G(self, k, i, j) -> Expr:
        return self.Gamma[k][i][j]

    def cov(self, X: Sequence, Y: Sequence) -> list[Expr]:
        """(D_X Y)^k = X(Y^k) + Gamma^k_ij Y^i X^j."""
        K = self.rank
        X = [ex.as_expr(c) for c in X]
        Y = [ex.as_expr(c) for c in Y]
        out = []
        for k in range(K):
            terms = [self.alg.act_vec(X, Y[k])]
            for i in range(K):
                if ex.is_zero(Y[i]):
                    continue
                for j in range(K):
                    g = self.Gamma[k][i][j]
                    if not ex.is_zero(g) and not ex.is_zero(X[j]):
                        terms.append(ex.mul_all([g, Y[i], X[j]]))
            out.append(_sum(terms))
        return out

    def torsion(self):
        if self._T is None:
            K, A = self.rank, self.alg
            self._T = [[[ex.sub(ex.sub(self.Gamma[k][j][i], self.Gamma[k][i][j]), A.C(k, i, j))
                         for j in range(K)] for i in range(K)] for k in range(K)]
        return self._T

    def curvature(self):
        if self._R is None:
            K, A, G = self.rank, self.alg, self.Gamma
            R = _zeros(K, K, K, K)
            for l, k, i, j in itertools.product(range(K), repeat=4):
                if j <= i:
                    continue
                terms = [A.act(i, G[l][k][j]), ex.neg(A.act(j, G[l][k][i]))]
                for m in range(K):
                    terms.append(ex.mul(G[m][k][j], G[l][m][i]))
                    terms.append(ex.neg(ex.mul(G[m][k][i], G[l][m][j])))
                    c = A.C(m, i, j)
                    if not ex.is_zero(c):
                        terms.append(ex.neg(ex.mul(c, G[l][k][m])))
                val = _sum(terms)
                R[l][k][i][j] = val
                R[l][k][j][i] = ex.neg(val)
            self._R = R
        return self._R

    # derived tensors --------------------------------------------------------
    def cov_torsion(self, i, j, k) -> list[Expr]:
        """((D_{e_i} T)(e_j, e_k))^l."""
        K, T, G = self.rank, self.torsion(), self.Gamma
        out = []
        for l in range(K):
            terms = [self.alg.act(i, T[l][j][k])]
            for m in range(K):
                terms.append(ex.mul(G[l][m][i], T[m][j][k]))
                terms.append(ex.neg(ex.mul(G[m][j][i], T[l][m][k])))
                terms.append(ex.neg(ex.mul(G[m][k][i], T[l][j][m])))
            out.append(_sum(terms))
        return out

    def cov_curvature(self, i, j, k, n) -> list[Expr]:
        """((D_{e_i} R)(e_j, e_k) e_n)^l."""
        K, R, G = self.rank, self.curvature(), self.Gamma
        out = []
        for l in range(K):
            terms = [self.alg.act(i, R[l][n][j][k])]
            for m in range(K):
                terms.append(ex.mul(G[l][m][i], R[m][n][j][k]))
                terms.append(ex.neg(ex.mul(G[m][n][i], R[l][m][j][k])))
                terms.append(ex.neg(ex.mul(G[m][j][i], R[l][n][m][k])))
                terms.append(ex.neg(ex.mul(G[m][k][i], R[l][n][j][m])))
            out.append(_sum(terms))
        return out

    def first_derivative(self, u: Sequence) -> list[list[Expr]]:
        """u^a_{;j} = e_j(u^a) + Gamma^a_bj u^b."""
        K = self.rank
        return [self.cov(self.alg.basis(j), u) for j in range(K)]  # [j][a]

    def second_derivative(self, u: Sequence) -> list[list[list[Expr]]]:
        """D2u[k][j][a] = (D_{e_k} Du)(e_j)^a = e_k(u^a_;j) + Gamma^a_bk u^b_;j - Gamma^m_jk u^a_;m."""
        K, G = self.rank, self.Gamma
        Du = self.first_derivative(u)
        out = []
        for k in range(K):
            row = []
            for j in range(K):
                comp = []
                for a in range(K):
                    terms = [self.alg.act(k, Du[j][a])]
                    for b in range(K):
                        terms.append(ex.mul(G[a][b][k], Du[j][b]))
                    for m in range(K):
                        terms.append(ex.neg(ex.mul(G[m][j][k], Du[m][a])))
                    comp.append(_sum(terms))
                row.append(comp)
            out.append(row)
        return out

    def ricci_identity(self, u: Sequence) -> tuple[list[Expr], list[Expr]]:
        """Residuals of the two Ricci-type commutation formulas for a section u.

        second order:  u_{|a|b} - u_{|b|a} + u^d R(e_a, e_b)_d - T^d_ab u_{;d} = 0
        first order:   D_b D_a u - D_a D_b u + R(e_a, e_b) u + D_[e_a, e_b] u = 0
        where u_{|a|b} = (D_{e_b} Du)(e_a).
        """
        K, R, T, A = self.rank, self.curvature(), self.torsion(), self.alg
        u = [ex.as_expr(c) for c in u]
        Du = self.first_derivative(u)
        D2 = self.second_derivative(u)
        second, first = [], []
        for a, b in itertools.combinations(range(K), 2):
            for c in range(K):
                terms = [D2[b][a][c], ex.neg(D2[a][b][c])]
                for dd in range(K):
                    terms.append(ex.mul(u[dd], R[c][dd][a][b]))
                    terms.append(ex.neg(ex.mul(T[dd][a][b], Du[dd][c])))
                second.append(_sum(terms))
            DbDa = self.cov(A.basis(b), Du[a])
            DaDb = self.cov(A.basis(a), Du[b])
            for c in range(K):
                terms = [DbDa[c], ex.neg(DaDb[c])]
                for dd in range(K):
                    terms.append(ex.mul(u[dd], R[c][dd][a][b]))
                    terms.append(ex.mul(A.C(dd, a, b), Du[dd][c]))
                first.append(_sum(terms))
        return second, first

    def bianchi(self) -> tuple[list[Expr], list[Expr]]:
        """Cyclic-sum residuals of the first and second Bianchi identities on basis triples."""
        K, R, T = self.rank, self.curvature(), self.torsion()
        b1, b2 = [], []
        for i, j, k in itertools.combinations(range(K), 3):
            cyc = [(i, j, k), (j, k, i), (k, i, j)]
            for l in range(K):
                terms = []
                for (a, b, c) in cyc:
                    terms.append(R[l][c][a][b])
                    for m in range(K):
                        terms.append(ex.neg(ex.mul(T[m][a][b], T[l][m][c])))
                    terms.append(ex.neg(self.cov_torsion(a, b, c)[l]))
                b1.append(_sum(terms))
            for n in range(K):
                acc = [[] for _ in range(K)]
                for (a, b, c) in cyc:
                    dr = self.cov_curvature(a, b, c, n)
                    for l in range(K):
                        acc[l].append(dr[l])
                        for m in range(K):
                            acc[l].append(ex.mul(T[m][a][b], R[l][n][m][c]))
                b2 += [_sum(t) for t in acc]
        return b1, b2

    def cartan_structure(self) -> tuple[list[Expr], list[Expr]]:
        """Residuals of T^a = d s^a + w^a_b ^ s^b and Omega^a_b = d w^a_b + w^a_c ^ w^c_b."""
        K, A, G = self.rank, self.alg, self.Gamma
        T, R = self.torsion(), self.curvature()
        if K < 2:
            return [], []
        omega = [[one_form(A, [G[a][b][j] for j in range(K)]) for b in range(K)] for a in range(K)]
        s = [coframe(A, a) for a in range(K)]
        c1, c2 = [], []
        for a in range(K):
            lhs = ExteriorForm(A, 2, {(i, j): T[a][i][j] for i in range(K) for j in range(i + 1, K)})
            rhs = ext_d(A, s[a])
            for b in range(K):
                rhs = rhs + wedge(omega[a][b], s[b])
            c1 += difference(lhs, rhs)
            for b in range(K):
                lhs = ExteriorForm(A, 2, {(i, j): R[a][b][i][j] for i in range(K) for j in range(i + 1, K)})
                rhs = ext_d(A, omega[a][b])
                for c in range(K):
                    rhs = rhs + wedge(omega[a][c], omega[c][b])
                c2 += difference(lhs, rhs)
        return c1, c2


# ---------------------------------------------------------------------------
# linear rho-connections on E = F, h = id


class LinearRhoConnection(LinearConnection):
    """Christoffel[a][b][alpha] = rho Gamma^a_{b alpha} over the base, acting on (F, nu, M) through rho o h."""

    def __init__(self, gla: GeneralizedLieAlgebroid, Christoffel):
        if not gla.same_base:
            raise ConfigurationError("linear rho-connections are modelled with N = M")
        p = gla.p
        if len(Christoffel) != p or any(len(r) != p or any(len(c) != p for c in r) for r in Christoffel):
            raise ConfigurationError(f"Christoffel array must be {p}x{p}x{p}")
        self.gla = gla
        super().__init__(gla.on_M, Christoffel)

    @property
    def Christoffel(self):
        return self.Gamma


def levi_civita_rho(gla: GeneralizedLieAlgebroid, g) -> LinearRhoConnection:
    """Torsion-free, g-compatible linear rho-connection.

    2 g_ed Gamma^e_bc = rho_c g_bd + rho_b g_dc - rho_d g_cb
                        + L^e_cb g_ed - L^e_cd g_eb - L^e_bd g_ec
    """
    A = gla.on_M
    p = gla.p
    g = _mat(g)
    if len(g) != p or any(len(r) != p for r in g):
        raise ConfigurationError(f"metric must be {p}x{p}")
    _check_symmetric(g)
    ginv = ex.inverse_matrix(g)
    K = [[[None] * p for _ in range(p)] for _ in range(p)]  # K[b][c][d]
    for b, c, dd in itertools.product(range(p), repeat=3):
        terms = [A.act(c, g[b][dd]), A.act(b, g[dd][c]), ex.neg(A.act(dd, g[c][b]))]
        for e in range(p):
            terms.append(ex.mul(A.C(e, c, b), g[e][dd]))
            terms.append(ex.neg(ex.mul(A.C(e, c, dd), g[e][b])))
            terms.append(ex.neg(ex.mul(A.C(e, b, dd), g[e][c])))
        K[b][c][dd] = _sum(terms)
    Gam = [[[ex.mul(ex.const(0.5), _sum(ex.mul(ginv[a][dd], K[b][c][dd]) for dd in range(p)))
             for c in range(p)] for b in range(p)] for a in range(p)]
    lc = LinearRhoConnection(gla, Gam)
    lc.metric = g
    lc.metric_inverse = ginv
    return lc


def _check_symmetric(g):
    n = len(g)
    for i in range(n):
        for j in range(i + 1, n):
            if not ex.structurally_equal(g[i][j], g[j][i]):
                raise ConfigurationError("metric not symmetric")


def rho_torsion(gla: GeneralizedLieAlgebroid, lc: LinearRhoConnection):
    """rho T^c_ab = rho Gamma^c_ba - rho Gamma^c_ab - L^c_ab  (= T(t_a, t_b)^c)."""
    p = gla.p
    G = lc.Gamma
    return [[[ex.sub(ex.sub(G[c][b][a], G[c][a][b]), gla.L_h(c, a, b)) for b in range(p)] for a in range(p)]
            for c in range(p)]


def rho_curvature(gla: GeneralizedLieAlgebroid, lc: LinearRhoConnection):
    """R^a_{b alpha beta} defined by R(t_beta, t_alpha) s_b = R^a_{b alpha beta} s_a, closed form."""
    p, A, G = gla.p, gla.on_M, lc.Gamma
    out = _zeros(p, p, p, p)
    for a, b, al, be in itertools.product(range(p), repeat=4):
        terms = [A.act(be, G[a][b][al]), ex.neg(A.act(al, G[a][b][be]))]
        for e in range(p):
            terms.append(ex.mul(G[a][e][be], G[e][b][al]))
            terms.append(ex.neg(ex.mul(G[a][e][al], G[e][b][be])))
            terms.append(ex.mul(G[a][b][e], gla.L_h(e, al, be)))
        out[a][b][al][be] = _sum(terms)
    return out


def metric_compatibility(conn: LinearConnection, g) -> list[Expr]:
    """(D_c g)_ab = e_c(g_ab) - Gamma^e_ac g_eb - Gamma^e_bc g_ae."""
    K, A, G = conn.rank, conn.alg, conn.Gamma
    out = []
    for a, b, c in itertools.product(range(K), repeat=3):
        terms = [A.act(c, g[a][b])]
        for e in range(K):
            terms.append(ex.neg(ex.mul(G[e][a][c], g[e][b])))
            terms.append(ex.neg(ex.mul(G[e][b][c], g[a][e])))
        out.append(_sum(terms))
    return out


def scalar_curvature_linear(conn: LinearConnection, ginv) -> Expr:
    """g^{kj} Ric_{jk} with Ric(Y, Z) = trace(X -> R(X, Y) Z)."""
    K, R = conn.rank, conn.curvature()
    return _sum(ex.mul(ginv[k][j], R[l][k][l][j]) for l in range(K) for k in range(K) for j in range(K))


def _env_for(gla, names, samples, rng, box=None):
    b = dict(gla.domain_box)
    if box:
        b.update(box)
    return sample_env(b, names, samples, rng)


def ricci_type_residual(gla: GeneralizedLieAlgebroid, lc: LinearConnection, u: Sequence | None = None,
                        samples: int = 100, seed: int = 0, tol: float = 1e-8) -> CheckReport:
    """Ricci-type commutation formulas for a section u (random polynomial when omitted)."""
    rng = rng_for(seed)
    names = lc.alg.coords
    if u is None:
        u = random_vector(names, lc.rank, rng)
    second, first = lc.ricci_identity(u)
    ev = ex.Evaluator(_env_for(gla, names, samples, rng))
    rep = CheckReport("ricci_type")
    rep.add("ricci_second_covariant", eval_all(second, ev), tol)
    rep.add("ricci_commutator", eval_all(first, ev), tol)
    return rep


def cartan_bianchi_linear(gla: GeneralizedLieAlgebroid, lc: LinearConnection, samples: int = 100, seed: int = 0,
                          tol: float = 1e-8) -> CheckReport:
    rng = rng_for(seed)
    ev = ex.Evaluator(_env_for(gla, lc.alg.coords, samples, rng))
    c1, c2 = lc.cartan_structure()
    b1, b2 = lc.bianchi()
    rep = CheckReport("cartan_bianchi")
    rep.add("C1", eval_all(c1, ev), tol)
    rep.add("C2", eval_all(c2, ev), tol)
    rep.add("B1", eval_all(b1, ev), tol)
    rep.add("B2", eval_all(b2, ev), tol)
    return rep


def linear_suite(gla: GeneralizedLieAlgebroid, lc: LinearRhoConnection, samples: int = 100, seed: int = 0,
                 tol: float = 1e-8) -> CheckReport:
    """Closed-form torsion/curvature vs the generic engine, plus Ricci, Cartan and Bianchi identities."""
    rng = rng_for(seed)
    ev = ex.Evaluator(_env_for(gla, lc.alg.coords, samples, rng))
    p = gla.p
    T, Tg = rho_torsion(gla, lc), lc.torsion()
    R, Rg = rho_curvature(gla, lc), lc.curvature()
    tres = [ex.sub(T[c][a][b], Tg[c][a][b]) for a, b, c in itertools.product(range(p), repeat=3)]
    rres = [ex.sub(R[a][b][al][be], Rg[a][b][be][al]) for a, b, al, be in itertools.product(range(p), repeat=4)]
    rep = CheckReport(f"linear {gla.name}")
    rep.add("torsion_closed_form", eval_all(tres, ev), tol)
    rep.add("curvature_closed_form", eval_all(rres, ev), tol)
    rep.extend(ricci_type_residual(gla, lc, samples=samples, seed=seed, tol=tol))
    rep.extend(cartan_bianchi_linear(gla, lc, samples=samples, seed=seed, tol=tol))
    return rep


# ---------------------------------------------------------------------------
# nonlinear connections and adapted frames


@dataclass
class NonlinearConnection:
    """Gamma[a][alpha] over (x, y); with ``dual`` the components Gamma*_{b alpha} over (x, p)."""

    gla: GeneralizedLieAlgebroid
    Gamma: list
    dual: bool = False

    def __post_init__(self):
        self.Gamma = _mat(self.Gamma)
        if any(len(row) != self.gla.p for row in self.Gamma):
            raise ConfigurationError(f"connection rows must have p = {self.gla.p} entries")
        self._frame = None

    @property
    def r(self) -> int:
        return len(self.Gamma)

    @property
    def p(self) -> int:
        return self.gla.p

    @property
    def sign(self) -> int:
        return 1 if self.dual else -1

    @property
    def fiber(self) -> tuple:
        return fiber_names(self.r, self.dual)

    @property
    def coords(self) -> tuple:
        return tuple(self.gla.base_names) + self.fiber

    @property
    def natural(self) -> FrameAlgebroid:
        return gtb(self.gla, self.r, self.dual)

    def delta(self, alpha: int, f: Expr) -> Expr:
        """rho~(delta_alpha) f, computed directly from rho o h and Gamma."""
        A = self.gla.on_M
        terms = [A.act(alpha, f)]
        for a, y in enumerate(self.fiber):
            g = self.Gamma[a][alpha]
            if not ex.is_zero(g):
                terms.append(ex.mul(ex.const(self.sign), ex.mul(g, ex.differentiate(f, y))))
        return _sum(terms)

    def vdot(self, a: int, f: Expr) -> Expr:
        return ex.differentiate(f, self.fiber[a])

    def sample(self, samples, rng, box=None):
        b = dict(self.gla.domain_box)
        if box:
            b.update(box)
        return sample_env(b, self.coords, samples, rng)


def zero_connection(gla: GeneralizedLieAlgebroid, r: int | None = None, dual: bool = False) -> NonlinearConnection:
    r = gla.p if r is None else r
    return NonlinearConnection(gla, _zeros(r, gla.p), dual)


def canonical_connection(lc: LinearConnection, dual: bool = False) -> NonlinearConnection:
    """Gamma^a_alpha = Gamma^a_{b alpha} y^b, or Gamma*_{b alpha} = Gamma^a_{b alpha} p_a on the dual."""
    gla = lc.gla
    p = gla.p
    G = lc.Gamma
    ys = [ex.var(n) for n in fiber_names(p, dual)]
    if dual:
        comps = [[_sum(ex.mul(G[a][b][al], ys[a]) for a in range(p)) for al in range(p)] for b in range(p)]
    else:
        comps = [[_sum(ex.mul(G[a][b][al], ys[b]) for b in range(p)) for al in range(p)] for a in range(p)]
    return NonlinearConnection(gla, comps, dual)


@dataclass
class AdaptedFrame:
    """Adapted frame f_i = P[i][k] e_k of the generalized tangent bundle and its dual coframe."""

    conn: NonlinearConnection
    P: list
    Pinv: list
    alg: FrameAlgebroid

    @property
    def frame(self) -> list[list[Expr]]:
        return self.P

    @property
    def coframe(self) -> list[list[Expr]]:
        """coframe[i][k]: component of the i-th adapted covector on the natural coframe e^k."""
        K = len(self.P)
        return [[self.Pinv[k][i] for k in range(K)] for i in range(K)]

    def pairing(self) -> list[Expr]:
        K = len(self.P)
        cf = self.coframe
        out = []
        for i in range(K):
            for j in range(K):
                v = _sum(ex.mul(cf[i][k], self.P[j][k]) for k in range(K))
                out.append(ex.sub(v, ONE if i == j else ZERO))
        return out

    def to_adapted(self, comps: Sequence) -> list[Expr]:
        """Natural components of a GTB section -> adapted components."""
        K = len(self.P)
        return [_sum(ex.mul(ex.as_expr(comps[k]), self.Pinv[k][i]) for k in range(K)) for i in range(K)]

    def to_natural(self, comps: Sequence) -> list[Expr]:
        K = len(self.P)
        return [_sum(ex.mul(ex.as_expr(comps[i]), self.P[i][k]) for i in range(K)) for k in range(K)]


def adapted_frame(gla: GeneralizedLieAlgebroid, conn: NonlinearConnection) -> AdaptedFrame:
    if conn.gla is not gla and conn.gla.p != gla.p:
        raise ConfigurationError("connection does not match the algebroid")
    if conn._frame is not None:
        return conn._frame
    p, r, s = gla.p, conn.r, conn.sign
    K = p + r
    P, Pinv = _zeros(K, K), _zeros(K, K)
    for i in range(K):
        P[i][i] = ONE
        Pinv[i][i] = ONE
    for al in range(p):
        for a in range(r):
            g = conn.Gamma[a][al]
            P[al][p + a] = ex.mul(ex.const(s), g)
            Pinv[al][p + a] = ex.mul(ex.const(-s), g)
    alg = conn.natural.change_frame(P, Pinv, f"{gla.name}:adapted")
    conn._frame = AdaptedFrame(conn, P, Pinv, alg)
    return conn._frame


def nonlinear_curvature(gla: GeneralizedLieAlgebroid, conn: NonlinearConnection):
    """R[a][alpha][beta], the vertical part of [delta_alpha, delta_beta] (closed form).

    primal: R^a_ab = delta_b(Gamma^a_a) - delta_a(Gamma^a_b) + L^g_ab Gamma^a_g
    dual:   R_{b ab} = delta_a(Gamma*_b b) - delta_b(Gamma*_b a) - L^g_ab Gamma*_b g
    """
    p, r, s = gla.p, conn.r, conn.sign
    G = conn.Gamma
    out = _zeros(r, p, p)
    for a in range(r):
        for al in range(p):
            for be in range(p):
                terms = [ex.mul(ex.const(s), conn.delta(al, G[a][be])),
                         ex.mul(ex.const(-s), conn.delta(be, G[a][al]))]
                for g in range(p):
                    terms.append(ex.mul(ex.const(-s), ex.mul(gla.L_h(g, al, be), G[a][g])))
                out[a][al][be] = _sum(terms)
    return out


def nonlinear_suite(gla, conn: NonlinearConnection, samples: int = 100, seed: int = 0, tol: float = 1e-9,
                    box=None) -> CheckReport:
    """Pairing of the adapted frame/coframe and the bracket relation for the curvature."""
    fr = adapted_frame(gla, conn)
    R = nonlinear_curvature(gla, conn)
    p, r = gla.p, conn.r
    T = conn.natural
    res = []
    for al in range(p):
        for be in range(p):
            br = T.bracket(fr.P[al], fr.P[be])
            expected = [gla.L_h(g, al, be) for g in range(p)] + [R[a][al][be] for a in range(r)]
            res += [ex.sub(x, y) for x, y in zip(fr.to_adapted(br), expected)]
    rng = rng_for(seed)
    ev = ex.Evaluator(conn.sample(samples, rng, box))
    rep = CheckReport("nonlinear_connection")
    rep.add("adapted_pairing", eval_all(fr.pairing(), ev), tol)
    rep.add("bracket_relation", eval_all(res, ev), tol)
    return rep


# ---------------------------------------------------------------------------
# remarkable endomorphisms


class Endomorphisms:
    """V, H, P, J, F on GTB sections given by natural components (horizontal then vertical).

    J and F need E = F and the fiber morphism g^a_b (identity by default) with inverse g~.
    """

    def __init__(self, gla: GeneralizedLieAlgebroid, conn: NonlinearConnection, g=None, ginv=None):
        self.gla, self.conn = gla, conn
        self.p, self.r = gla.p, conn.r
        self.frame = adapted_frame(gla, conn)
        if g is None:
            g = [[ONE if i == j else ZERO for j in range(self.r)] for i in range(self.r)]
            ginv = g
        elif ginv is None:
            ginv = ex.inverse_matrix(g)
        self.g, self.ginv = _mat(g), _mat(ginv)

    def _split(self, U):
        U = [ex.as_expr(c) for c in U]
        if len(U) != self.p + self.r:
            raise ConfigurationError("section has the wrong number of components")
        return U[:self.p], U[self.p:]

    def _adapted_vertical(self, U):
        Z, Y = self._split(U)
        s = self.conn.sign
        return [_sum([Y[a]] + [ex.mul(ex.const(-s), ex.mul(self.conn.Gamma[a][al], Z[al])) for al in range(self.p)])
                for a in range(self.r)]

    def _horizontal_lift(self, Z):
        s = self.conn.sign
        return list(Z) + [_sum(ex.mul(ex.const(s), ex.mul(self.conn.Gamma[a][al], Z[al])) for al in range(self.p))
                          for a in range(self.r)]

    def identity(self, U):
        return [ex.as_expr(c) for c in U]

    def H(self, U):
        Z, _ = self._split(U)
        return self._horizontal_lift(Z)

    def V(self, U):
        return [ZERO] * self.p + self._adapted_vertical(U)

    def P(self, U):
        return [ex.sub(a, b) for a, b in zip(self.H(U), self.V(U))]

    def _need_square(self):
        if self.p != self.r:
            raise ConfigurationError("J and F need E = F (p = r)")

    def J(self, U):
        self._need_square()
        Z, _ = self._split(U)
        return [ZERO] * self.p + [_sum(ex.mul(self.ginv[b][a], Z[a]) for a in range(self.p)) for b in range(self.r)]

    def F(self, U):
        self._need_square()
        Z, _ = self._split(U)
        Yad = self._adapted_vertical(U)
        W = [_sum(ex.mul(self.g[a][b], Yad[b]) for b in range(self.r)) for a in range(self.p)]
        hor = self._horizontal_lift(W)
        Jz = self.J(U)
        return [ex.sub(h, j) for h, j in zip(hor, Jz)]

    def tension(self):
        """H^a_b = Gamma^a_b - y^c d Gamma^a_b / d y^c."""
        G, ys = self.conn.Gamma, [ex.var(n) for n in self.conn.fiber]
        return [[ex.sub(G[a][b], _sum(ex.mul(ys[c], self.conn.vdot(c, G[a][b])) for c in range(self.r)))
                 for b in range(self.p)] for a in range(self.r)]

    def nijenhuis(self, op, X, Y):
        """N_e(X, Y) = [eX, eY] + e^2[X, Y] - e[eX, Y] - e[X, eY] with the GTB bracket."""
        T = self.conn.natural
        eX, eY = op(X), op(Y)
        t1 = T.bracket(eX, eY)
        t2 = op(op(T.bracket(X, Y)))
        t3 = op(T.bracket(eX, Y))
        t4 = op(T.bracket(X, eY))
        return [_sum([a, b, ex.neg(c), ex.neg(dd)]) for a, b, c, dd in zip(t1, t2, t3, t4)]

    def basis(self, k):
        """Adapted basis section k in natural components."""
        return list(self.frame.P[k])


def endomorphisms(gla, conn, g=None, ginv=None) -> Endomorphisms:
    return Endomorphisms(gla, conn, g, ginv)


def _compose(*ops):
    def f(U):
        for op in reversed(ops):
            U = op(U)
        return U
    return f


def endomorphism_suite(gla, conn, samples: int = 100, seed: int = 0, tol: float = 1e-12, g=None, ginv=None,
                       n_sections: int = 3, box=None) -> CheckReport:
    """Algebra laws of the projectors and the almost product/tangent/complex structures."""
    E = endomorphisms(gla, conn, g, ginv)
    rng = rng_for(seed)
    names = conn.coords
    K = E.p + E.r
    sections = [random_vector(names, K, rng) for _ in range(n_sections)]
    ev = ex.Evaluator(conn.sample(samples, rng, box))

    def law(lhs, rhs):
        out = []
        for U in sections:
            out += [ex.sub(a, b) for a, b in zip(lhs(U), rhs(U))]
        return eval_all(out, ev)

    I = E.identity
    two = lambda op: (lambda U: [ex.mul(ex.const(2.0), c) for c in op(U)])
    minus = lambda op: (lambda U: [ex.neg(c) for c in op(U)])
    diff = lambda a, b: (lambda U: [ex.sub(x, y) for x, y in zip(a(U), b(U))])
    zero = lambda U: [ZERO] * K
    rep = CheckReport("endomorphisms")
    rep.add("V_V_eq_V", law(_compose(E.V, E.V), E.V), tol)
    rep.add("H_H_eq_H", law(_compose(E.H, E.H), E.H), tol)
    rep.add("H_plus_V_eq_Id", law(lambda U: [a + b for a, b in zip(E.H(U), E.V(U))], I), tol)
    rep.add("P_eq_2H_minus_Id", law(E.P, diff(two(E.H), I)), tol)
    rep.add("P_eq_Id_minus_2V", law(E.P, diff(I, two(E.V))), tol)
    rep.add("P_P_eq_Id", law(_compose(E.P, E.P), I), tol)
    vres = []
    for al in range(E.p):
        vres += E.V(E.basis(al))
    for a in range(E.r):
        vres += [ex.sub(x, y) for x, y in zip(E.V(E.basis(E.p + a)), E.basis(E.p + a))]
    rep.add("V_on_adapted_basis", eval_all(vres, ev), tol)
    if E.p == E.r:
        rep.add("J_J_eq_0", law(_compose(E.J, E.J), zero), tol)
        rep.add("J_P_eq_J", law(_compose(E.J, E.P), E.J), tol)
        rep.add("P_J_eq_minus_J", law(_compose(E.P, E.J), minus(E.J)), tol)
        rep.add("J_H_eq_J", law(_compose(E.J, E.H), E.J), tol)
        rep.add("H_J_eq_0", law(_compose(E.H, E.J), zero), tol)
        rep.add("J_V_eq_0", law(_compose(E.J, E.V), zero), tol)
        rep.add("V_J_eq_J", law(_compose(E.V, E.J), E.J), tol)
        rep.add("F_J_eq_H", law(_compose(E.F, E.J), E.H), tol)
        rep.add("F_H_eq_minus_J", law(_compose(E.F, E.H), minus(E.J)), tol)
        rep.add("J_F_eq_V", law(_compose(E.J, E.F), E.V), tol)
        rep.add("F_F_eq_minus_Id", law(_compose(E.F, E.F), minus(I)), tol)
        nj = []
        for i, j in itertools.combinations(range(K), 2):
            nj += E.nijenhuis(E.J, E.basis(i), E.basis(j))
        rep.add("N_J_eq_0", eval_all(nj, ev), tol)
    return rep


def nijenhuis_F_basis(gla, conn, g=None, ginv=None) -> list[Expr]:
    """N_F on all pairs of adapted basis sections (natural components, flattened)."""
    E = endomorphisms(gla, conn, g, ginv)
    K = E.p + E.r
    out = []
    for i, j in itertools.combinations(range(K), 2):
        out += E.nijenhuis(E.F, E.basis(i), E.basis(j))
    return out


def connection_torsion_deflection(gla: GeneralizedLieAlgebroid, conn: NonlinearConnection) -> dict:
    """T^a_bc, tension H^a_b and deflection D^a_b of a nonlinear connection on E = F.

    T^a_bc = dGamma^a_c/dy^b - dGamma^a_b/dy^c - L^a_bc o h
    H^a_b  = Gamma^a_b - y^c dGamma^a_b/dy^c
    D^a_b  = -Gamma^a_b + y^c dGamma^a_c/dy^b - y^c L^a_bc o h
    """
    p = gla.p
    if conn.r != p:
        raise ConfigurationError("torsion/deflection need E = F (r = p)")
    G = conn.Gamma
    ys = [ex.var(n) for n in conn.fiber]
    T = [[[_sum([conn.vdot(b, G[a][c]), ex.neg(conn.vdot(c, G[a][b])), ex.neg(gla.L_h(a, b, c))])
           for c in range(p)] for b in range(p)] for a in range(p)]
    H = endomorphisms(gla, conn).tension()
    D = [[_sum([ex.neg(G[a][b])]
               + [ex.mul(ys[c], conn.vdot(b, G[a][c])) for c in range(p)]
               + [ex.neg(ex.mul(ys[c], gla.L_h(a, b, c))) for c in range(p)])
          for b in range(p)] for a in range(p)]
    return {"torsion": T, "tension": H, "deflection": D}


# ---------------------------------------------------------------------------
# distinguished linear connections


@dataclass
class DistinguishedConnection:
    """Blocks Hh[alpha][beta][gamma], Hv[a][b][gamma], Vh[alpha][beta][c], Vv[a][b][c] in the adapted frame:

    D_{delta_g} delta_b = Hh^a_bg delta_a,  D_{delta_g} d._b = Hv^a_bg d._a,
    D_{d._c} delta_b = Vh^a_bc delta_a,     D_{d._c} d._b = Vv^a_bc d._a.
    """

    conn: NonlinearConnection
    Hh: list
    Hv: list
    Vh: list
    Vv: list
    name: str = ""

    def __post_init__(self):
        p, r = self.conn.p, self.conn.r
        self.Hh = [[[ex.as_expr(c) for c in row] for row in blk] for blk in self.Hh]
        self.Hv = [[[ex.as_expr(c) for c in row] for row in blk] for blk in self.Hv]
        self.Vh = [[[ex.as_expr(c) for c in row] for row in blk] for blk in self.Vh]
        self.Vv = [[[ex.as_expr(c) for c in row] for row in blk] for blk in self.Vv]
        shapes = {"Hh": (p, p, p), "Hv": (r, r, p), "Vh": (p, p, r), "Vv": (r, r, r)}
        for nm, shp in shapes.items():
            blk = getattr(self, nm)
            if (len(blk), len(blk[0]) if blk else 0, len(blk[0][0]) if blk and blk[0] else 0) != shp:
                raise ConfigurationError(f"block {nm} must have shape {shp}")
        self._lin = None

    @property
    def dual(self) -> bool:
        return self.conn.dual

    def block(self, slot_kind: str, dir_kind: str):
        return {("h", "h"): self.Hh, ("v", "h"): self.Hv, ("h", "v"): self.Vh, ("v", "v"): self.Vv}[
            (slot_kind, dir_kind)]

    def linear(self) -> LinearConnection:
        """The same connection as a generic linear connection on the adapted frame."""
        if self._lin is None:
            p, r = self.conn.p, self.conn.r
            K = p + r
            G = _zeros(K, K, K)
            for k, i, j in itertools.product(range(K), repeat=3):
                kh, ih, jh = k < p, i < p, j < p
                if kh != ih:
                    continue
                blk = self.block("h" if ih else "v", "h" if jh else "v")
                G[k][i][j] = blk[k if kh else k - p][i if ih else i - p][j if jh else j - p]
            fr = adapted_frame(self.conn.gla, self.conn)
            self._lin = LinearConnection(fr.alg, G)
        return self._lin


def _dc_zero(conn):
    p, r = conn.p, conn.r
    return _zeros(p, p, p), _zeros(r, r, p), _zeros(p, p, r), _zeros(r, r, r)


def berwald(gla: GeneralizedLieAlgebroid, conn: NonlinearConnection) -> DistinguishedConnection:
    """(dGamma^a_g/dy^b, dGamma^a_g/dy^b, 0, 0); the horizontal block needs E = F."""
    p, r = gla.p, conn.r
    if p != r:
        raise ConfigurationError("the Berwald connection needs E = F (r = p)")
    Hh, Hv, Vh, Vv = _dc_zero(conn)
    s = -conn.sign  # primal: +dGamma/dy; dual: -dGamma*/dp
    for a, b, g in itertools.product(range(p), repeat=3):
        val = ex.mul(ex.const(s), conn.vdot(b, conn.Gamma[a][g]))
        Hh[a][b][g] = val
        Hv[a][b][g] = val
    return DistinguishedConnection(conn, Hh, Hv, Vh, Vv, "berwald")


@dataclass
class MetricStructure:
    """g_h (p x p) and g_v (r x r) symmetric Expr matrices over the total space."""

    g_h: list
    g_v: list

    def __post_init__(self):
        self.g_h = _mat(self.g_h)
        self.g_v = _mat(self.g_v)
        for g in (self.g_h, self.g_v):
            if any(len(row) != len(g) for row in g):
                raise ConfigurationError("metric must be square")
            _check_symmetric(g)
        self.h_inv = ex.inverse_matrix(self.g_h)
        self.v_inv = ex.inverse_matrix(self.g_v)

    def condition_numbers(self, env: dict) -> np.ndarray:
        ev = ex.Evaluator(env)
        out = []
        for g in (self.g_h, self.g_v):
            n = len(g)
            M = eval_all([c for row in g for c in row], ev).T.reshape(-1, n, n)
            out.append(np.linalg.cond(M))
        return np.maximum(out[0], out[1])


def metric_d_connection(gla: GeneralizedLieAlgebroid, conn: NonlinearConnection, G: MetricStructure,
                        normal: bool = False) -> DistinguishedConnection:
    """Canonical metric distinguished connection (primal bundle).

    Hh: Koszul formula with delta-derivatives and L o h;  Hv = B + 1/2 g^{-1} g_{|0};
    Vh = 1/2 g^{-1} dg_h/dy;  Vv = vertical Christoffel of g_v.  ``normal=True`` gives the
    Levi-Civita-type variant Hv = Hh, Vh = Vv (needs E = F and g_h = g_v).
    """
    p, r = gla.p, conn.r
    gh, gv, ghi, gvi = G.g_h, G.g_v, G.h_inv, G.v_inv
    if len(gh) != p or len(gv) != r:
        raise ConfigurationError("metric block sizes do not match the bundle")
    half = ex.const(0.5)
    dl = conn.delta
    Hh, Hv, Vh, Vv = _dc_zero(conn)
    Kh = {}
    for b, c, dd in itertools.product(range(p), repeat=3):
        terms = [dl(c, gh[b][dd]), dl(b, gh[dd][c]), ex.neg(dl(dd, gh[c][b]))]
        for e in range(p):
            terms.append(ex.mul(gla.L_h(e, c, b), gh[e][dd]))
            terms.append(ex.neg(ex.mul(gla.L_h(e, c, dd), gh[e][b])))
            terms.append(ex.neg(ex.mul(gla.L_h(e, b, dd), gh[e][c])))
        Kh[b, c, dd] = _sum(terms)
    for a, b, c in itertools.product(range(p), repeat=3):
        Hh[a][b][c] = ex.mul(half, _sum(ex.mul(ghi[a][dd], Kh[b, c, dd]) for dd in range(p)))
    Kv = {}
    for b, c, dd in itertools.product(range(r), repeat=3):
        Kv[b, c, dd] = _sum([conn.vdot(b, gv[dd][c]), conn.vdot(c, gv[b][dd]), ex.neg(conn.vdot(dd, gv[b][c]))])
    for a, b, c in itertools.product(range(r), repeat=3):
        Vv[a][b][c] = ex.mul(half, _sum(ex.mul(gvi[a][dd], Kv[b, c, dd]) for dd in range(r)))
    if normal:
        if p != r:
            raise ConfigurationError("the normal connection needs E = F")
        for a, b, c in itertools.product(range(p), repeat=3):
            Hv[a][b][c] = Hh[a][b][c]
            Vh[a][b][c] = Vv[a][b][c]
        return DistinguishedConnection(conn, Hh, Hv, Vh, Vv, "normal")
    s = -conn.sign
    B = [[[ex.mul(ex.const(s), conn.vdot(b, conn.Gamma[a][g])) for g in range(p)] for b in range(r)]
         for a in range(r)]
    for g in range(p):
        g0 = [[_sum([dl(g, gv[b][c])]
                    + [ex.neg(ex.mul(B[dd][b][g], gv[dd][c])) for dd in range(r)]
                    + [ex.neg(ex.mul(B[dd][c][g], gv[b][dd])) for dd in range(r)])
               for c in range(r)] for b in range(r)]
        for a, b in itertools.product(range(r), repeat=2):
            Hv[a][b][g] = ex.add(B[a][b][g], ex.mul(half, _sum(ex.mul(gvi[a][c], g0[b][c]) for c in range(r))))
    for al, be, c in itertools.product(range(p), range(p), range(r)):
        Vh[al][be][c] = ex.mul(half, _sum(ex.mul(ghi[al][e], conn.vdot(c, gh[be][e])) for e in range(p)))
    return DistinguishedConnection(conn, Hh, Hv, Vh, Vv, "metric")


# d-tensors ------------------------------------------------------------------


@dataclass
class DTensor:
    """Distinguished tensor field: ``slots`` is a tuple of (kind, up) with kind 'h' or 'v'."""

    slots: tuple
    comps: dict = field(default_factory=dict)

    def dims(self, p, r):
        return [range(p) if k == "h" else range(r) for k, _ in self.slots]

    def __getitem__(self, idx):
        return self.comps.get(tuple(idx), ZERO)


def dtensor(slots, array, p, r) -> DTensor:
    """Build a DTensor from a nested list indexed like the slots."""
    t = DTensor(tuple(slots))
    for idx in itertools.product(*t.dims(p, r)):
        v = array
        for i in idx:
            v = v[i]
        v = ex.as_expr(v)
        if not ex.is_zero(v):
            t.comps[idx] = v
    return t


MAX_VALENCE = 4


def covariant_derivative(dc: DistinguishedConnection, T: DTensor, kind: str) -> DTensor:
    """Full horizontal ('h', the |gamma derivative) or vertical ('v', the |_c derivative); appends a lower slot."""
    conn = dc.conn
    p, r = conn.p, conn.r
    if len(T.slots) > MAX_VALENCE:
        raise ConfigurationError("unsupported valence")
    ndir = p if kind == "h" else r
    act = (lambda k, f: conn.delta(k, f)) if kind == "h" else (lambda k, f: conn.vdot(k, f))
    out = DTensor(T.slots + ((kind, False),))
    for idx in itertools.product(*T.dims(p, r)):
        for k in range(ndir):
            terms = [act(k, T[idx])]
            for s, (sk, up) in enumerate(T.slots):
                blk = dc.block(sk, kind)
                n = p if sk == "h" else r
                for j in range(n):
                    other = idx[:s] + (j,) + idx[s + 1:]
                    c = T[other]
                    if ex.is_zero(c):
                        continue
                    if up:
                        terms.append(ex.mul(blk[idx[s]][j][k], c))
                    else:
                        terms.append(ex.neg(ex.mul(blk[j][idx[s]][k], c)))
            v = _sum(terms)
            if not ex.is_zero(v):
                out.comps[idx + (k,)] = v
    return out


def d_covariant_derivative(gla, dc: DistinguishedConnection, tensor: DTensor, direction) -> DTensor:
    """D_X T for X given by natural GTB components (or a GTBSection), contracted over the new slot."""
    conn = dc.conn
    p, r = conn.p, conn.r
    comps = direction.components if isinstance(direction, GTBSection) else [ex.as_expr(c) for c in direction]
    fr = adapted_frame(gla, conn)
    ad = fr.to_adapted(comps)
    Th = covariant_derivative(dc, tensor, "h")
    Tv = covariant_derivative(dc, tensor, "v")
    out = DTensor(tensor.slots)
    for idx in itertools.product(*tensor.dims(p, r)):
        v = _sum([ex.mul(ad[k], Th[idx + (k,)]) for k in range(p)]
                 + [ex.mul(ad[p + c], Tv[idx + (c,)]) for c in range(r)])
        if not ex.is_zero(v):
            out.comps[idx] = v
    return out


def metric_residuals(dc: DistinguishedConnection, G: MetricStructure) -> dict[str, list[Expr]]:
    """The four families g_ab|gamma, g_ab|gamma (vertical metric), g|_c, g|_c."""
    p, r = dc.conn.p, dc.conn.r
    gh = dtensor((("h", False), ("h", False)), G.g_h, p, r)
    gv = dtensor((("v", False), ("v", False)), G.g_v, p, r)
    out = {}
    for nm, t in (("gh", gh), ("gv", gv)):
        for kind in ("h", "v"):
            D = covariant_derivative(dc, t, kind)
            out[f"{nm}|{kind}"] = list(D.comps.values())
    return out


def d_torsion(gla, conn: NonlinearConnection, dc: DistinguishedConnection) -> dict:
    """Closed-form torsion blocks in the adapted frame.

    T^al_{be ga} = Hh^al_{be ga} - Hh^al_{ga be} - L^al_{ga be} o h
    T^a_{be ga}  = R^a_{be ga} (nonlinear curvature)
    P^al_{be c}  = Vh^al_{be c}
    P^a_{be c}   = dGamma^a_be/dy^c - Hv^a_{c be}   (sign of the first term flips on the dual)
    S^a_{bc}     = Vv^a_bc - Vv^a_cb
    """
    p, r = gla.p, conn.r
    Rn = nonlinear_curvature(gla, conn)
    s = -conn.sign
    Th = [[[_sum([dc.Hh[al][be][ga], ex.neg(dc.Hh[al][ga][be]), ex.neg(gla.L_h(al, ga, be))])
            for ga in range(p)] for be in range(p)] for al in range(p)]
    Tv = [[[Rn[a][be][ga] for ga in range(p)] for be in range(p)] for a in range(r)]
    Ph = [[[dc.Vh[al][be][c] for c in range(r)] for be in range(p)] for al in range(p)]
    Pv = [[[ex.sub(ex.mul(ex.const(s), conn.vdot(c, conn.Gamma[a][be])), dc.Hv[a][c][be])
            for c in range(r)] for be in range(p)] for a in range(r)]
    S = [[[ex.sub(dc.Vv[a][b][c], dc.Vv[a][c][b]) for c in range(r)] for b in range(r)] for a in range(r)]
    return {"T_h": Th, "T_v": Tv, "P_h": Ph, "P_v": Pv, "S_v": S}


def d_curvature(gla, conn: NonlinearConnection, dc: DistinguishedConnection) -> dict:
    """Closed-form curvature blocks (indices as in R(delta_eps, delta_gam) delta_bet = R^al_{bet gam eps} delta_al).

    R^al_{be ga ep} = delta_ep Hh^al_{be ga} - delta_ga Hh^al_{be ep} + Hh^th_{be ga} Hh^al_{th ep}
                      - Hh^th_{be ep} Hh^al_{th ga} + L^th_{ga ep} Hh^al_{be th} + R^d_{ga ep} Vh^al_{be d}
    P^al_{ep ga c}  = d._c Hh^al_{ep ga} - delta_ga Vh^al_{ep c} + Hh^th_{ep ga} Vh^al_{th c}
                      - Vh^th_{ep c} Hh^al_{th ga} + (dGamma^d_ga/dy^c) Vh^al_{ep d}
    S^al_{be bc}    = d._c Vh^al_{be b} - d._b Vh^al_{be c} + Vh^th_{be b} Vh^al_{th c} - Vh^th_{be c} Vh^al_{th b}
    and the vertical analogues with (Hv, Vv).  On the dual the dGamma term changes sign.
    """
    p, r = gla.p, conn.r
    Rn = nonlinear_curvature(gla, conn)
    s = -conn.sign
    dl, vd = conn.delta, conn.vdot
    out = {}
    for lab, H, V, n in (("h", dc.Hh, dc.Vh, p), ("v", dc.Hv, dc.Vv, r)):
        R = _zeros(n, n, p, p)
        P = _zeros(n, n, p, r)
        S = _zeros(n, n, r, r)
        for al, be in itertools.product(range(n), repeat=2):
            for ga, ep in itertools.product(range(p), repeat=2):
                terms = [dl(ep, H[al][be][ga]), ex.neg(dl(ga, H[al][be][ep]))]
                for th in range(n):
                    terms.append(ex.mul(H[th][be][ga], H[al][th][ep]))
                    terms.append(ex.neg(ex.mul(H[th][be][ep], H[al][th][ga])))
                for th in range(p):
                    terms.append(ex.mul(gla.L_h(th, ga, ep), H[al][be][th]))
                for d_ in range(r):
                    terms.append(ex.mul(Rn[d_][ga][ep], V[al][be][d_]))
                R[al][be][ga][ep] = _sum(terms)
            for ga, c in itertools.product(range(p), range(r)):
                terms = [vd(c, H[al][be][ga]), ex.neg(dl(ga, V[al][be][c]))]
                for th in range(n):
                    terms.append(ex.mul(H[th][be][ga], V[al][th][c]))
                    terms.append(ex.neg(ex.mul(V[th][be][c], H[al][th][ga])))
                for d_ in range(r):
                    terms.append(ex.mul(ex.const(s), ex.mul(vd(c, conn.Gamma[d_][ga]), V[al][be][d_])))
                P[al][be][ga][c] = _sum(terms)
            for b, c in itertools.product(range(r), repeat=2):
                terms = [vd(c, V[al][be][b]), ex.neg(vd(b, V[al][be][c]))]
                for th in range(n):
                    terms.append(ex.mul(V[th][be][b], V[al][th][c]))
                    terms.append(ex.neg(ex.mul(V[th][be][c], V[al][th][b])))
                S[al][be][b][c] = _sum(terms)
        out["R_" + lab], out["P_" + lab], out["S_" + lab] = R, P, S
    return out


def _generic_torsion_blocks(dc: DistinguishedConnection) -> dict:
    """The torsion blocks read off the generic engine on the adapted frame."""
    p, r = dc.conn.p, dc.conn.r
    T = dc.linear().torsion()
    H, V = range(p), range(r)
    return {
        "T_h": [[[T[al][ga][be] for ga in H] for be in H] for al in H],
        "T_v": [[[T[p + a][ga][be] for ga in H] for be in H] for a in V],
        "P_h": [[[T[al][p + c][be] for c in V] for be in H] for al in H],
        "P_v": [[[T[p + a][p + c][be] for c in V] for be in H] for a in V],
        "S_v": [[[T[p + a][p + c][p + b] for c in V] for b in V] for a in V],
    }


def _generic_curvature_blocks(dc: DistinguishedConnection) -> dict:
    p, r = dc.conn.p, dc.conn.r
    R = dc.linear().curvature()
    out = {}
    for lab, off, n in (("h", 0, p), ("v", p, r)):
        N = range(n)
        out["R_" + lab] = [[[[R[off + a][off + b][ep][ga] for ep in range(p)] for ga in range(p)] for b in N]
                           for a in N]
        out["P_" + lab] = [[[[R[off + a][off + b][p + c][ga] for c in range(r)] for ga in range(p)] for b in N]
                           for a in N]
        out["S_" + lab] = [[[[R[off + a][off + b][p + c][p + bb] for c in range(r)] for bb in range(r)] for b in N]
                           for a in N]
    return out


def _flatten(x):
    if isinstance(x, list):
        for y in x:
            yield from _flatten(y)
    else:
        yield x


def ricci_einstein(gla, conn: NonlinearConnection, dc: DistinguishedConnection, G: MetricStructure,
                   kappa: float = 1.0) -> dict:
    """Ricci blocks, scalar curvature, energy-momentum blocks and the definitional Einstein residuals."""
    p, r = gla.p, conn.r
    if kappa == 0:
        raise ConfigurationError("kappa must be non-zero")
    cb = d_curvature(gla, conn, dc)
    Rh, Ph, Pv, Sv = cb["R_h"], cb["P_h"], cb["P_v"], cb["S_v"]
    Ric_hh = [[_sum(Rh[g][a][b][g] for g in range(p)) for b in range(p)] for a in range(p)]
    Ric_hv = [[_sum(Ph[be][al][be][b] for be in range(p)) for b in range(r)] for al in range(p)]
    Ric_vh = [[_sum(Pv[c][a][be][c] for c in range(r)) for be in range(p)] for a in range(r)]
    Ric_vv = [[_sum(Sv[c][a][c][b] for c in range(r)) for b in range(r)] for a in range(r)]
    scalar = _sum([ex.mul(Ric_hh[a][b], G.h_inv[a][b]) for a in range(p) for b in range(p)]
                  + [ex.mul(Ric_vv[a][b], G.v_inv[a][b]) for a in range(r) for b in range(r)])
    half_R = ex.mul(ex.const(0.5), scalar)
    k = ex.const(1.0 / kappa)
    T_hh = [[ex.mul(k, ex.sub(Ric_hh[a][b], ex.mul(half_R, G.g_h[a][b]))) for b in range(p)] for a in range(p)]
    T_hv = [[ex.mul(ex.neg(k), Ric_hv[a][b]) for b in range(r)] for a in range(p)]
    T_vh = [[ex.mul(k, Ric_vh[a][b]) for b in range(p)] for a in range(r)]
    T_vv = [[ex.mul(k, ex.sub(Ric_vv[a][b], ex.mul(half_R, G.g_v[a][b]))) for b in range(r)] for a in range(r)]
    kap = ex.const(kappa)
    einstein = ([ex.sub(ex.mul(kap, T_hh[a][b]), ex.sub(Ric_hh[a][b], ex.mul(half_R, G.g_h[a][b])))
                 for a in range(p) for b in range(p)]
                + [ex.add(ex.mul(kap, T_hv[a][b]), Ric_hv[a][b]) for a in range(p) for b in range(r)]
                + [ex.sub(ex.mul(kap, T_vh[a][b]), Ric_vh[a][b]) for a in range(r) for b in range(p)]
                + [ex.sub(ex.mul(kap, T_vv[a][b]), ex.sub(Ric_vv[a][b], ex.mul(half_R, G.g_v[a][b])))
                   for a in range(r) for b in range(r)])
    return {"ricci": {"R": Ric_hh, "P_hv": Ric_hv, "P_vh": Ric_vh, "S": Ric_vv}, "scalar": scalar,
            "energy_momentum": {"hh": T_hh, "hv": T_hv, "vh": T_vh, "vv": T_vv}, "einstein_residual": einstein}


def identity_suite_d(gla, conn: NonlinearConnection, dc: DistinguishedConnection, samples: int = 100,
                     seed: int = 0, tol: float = 1e-8, box=None, n_sections: int = 2) -> CheckReport:
    """Ricci-type, Cartan and Bianchi identities for a distinguished connection.

    The closed-form blocks are compared with the generic engine on the adapted frame, the
    double covariant derivative of random d-vector fields is compared with the closed-form
    torsion and curvature blocks, and the Cartan/Bianchi identities run on the adapted frame.
    """
    p, r = gla.p, conn.r
    lin = dc.linear()
    rng = rng_for(seed)
    names = conn.coords
    sections = [random_vector(names, p + r, rng) for _ in range(n_sections)]
    ev = ex.Evaluator(conn.sample(samples, rng, box))
    rep = CheckReport(f"identities {gla.name}")

    tb, tg = d_torsion(gla, conn, dc), _generic_torsion_blocks(dc)
    res = [ex.sub(a, b) for k in tb for a, b in zip(_flatten(tb[k]), _flatten(tg[k]))]
    rep.add("torsion_blocks", eval_all(res, ev), tol)
    cb, cg = d_curvature(gla, conn, dc), _generic_curvature_blocks(dc)
    res = []
    for k in cb:
        res += [ex.sub(a, b) for a, b in zip(_flatten(cb[k]), _flatten(cg[k]))]
    rep.add("curvature_blocks", eval_all(res, ev), tol)

    # Ricci type: X^i_{;j;k} - X^i_{;k;j} = X^l R(e_k, e_j)^i_l - T(e_k, e_j)^m X^i_{;m}
    Tfull, Rfull = _assemble_blocks(tb, cb, p, r)
    ricci = []
    for X in sections:
        Xh = dtensor((("h", True),), X[:p], p, r)
        Xv = dtensor((("v", True),), X[p:], p, r)
        DX = _first(dc, Xh, Xv, p, r)  # DX[i][j] = X^i_{;j}
        D2 = _second(dc, Xh, Xv, p, r)  # D2[i][j][k] = X^i_{;j;k}
        K = p + r
        for i in range(K):
            for j, k in itertools.combinations(range(K), 2):
                terms = [D2[i][j][k], ex.neg(D2[i][k][j])]
                for l in range(K):
                    terms.append(ex.neg(ex.mul(ex.as_expr(X[l]), Rfull[i][l][k][j])))
                for m in range(K):
                    terms.append(ex.mul(Tfull[m][k][j], DX[i][m]))
                ricci.append(_sum(terms))
    rep.add("ricci_type", eval_all(ricci, ev), tol)
    second, first = [], []
    for X in sections:
        a, b = lin.ricci_identity(X)
        second += a
        first += b
    rep.add("ricci_commutator", eval_all(first, ev), tol)
    c1, c2 = lin.cartan_structure()
    rep.add("cartan_C1", eval_all(c1, ev), tol)
    rep.add("cartan_C2", eval_all(c2, ev), tol)
    b1, b2 = lin.bianchi()
    rep.add("bianchi_B1", eval_all(b1, ev), tol)
    rep.add("bianchi_B2", eval_all(b2, ev), tol)
    return rep


def _assemble_blocks(tb, cb, p, r):
    """Full T[m][k][j] = T(e_k, e_j)^m and R[i][l][k][j] = (R(e_k, e_j) e_l)^i from the closed-form blocks."""
    K = p + r
    T = _zeros(K, K, K)
    for m, k, j in itertools.product(range(K), repeat=3):
        kh, jh, mh = k < p, j < p, m < p
        if kh and jh:
            # T(delta_k, delta_j) = T^m_{j k}
            v = tb["T_h"][m][j][k] if mh else tb["T_v"][m - p][j][k]
        elif not kh and jh:
            v = tb["P_h"][m][j][k - p] if mh else tb["P_v"][m - p][j][k - p]
        elif kh and not jh:
            v = ex.neg(tb["P_h"][m][k][j - p] if mh else tb["P_v"][m - p][k][j - p])
        else:
            v = ZERO if mh else tb["S_v"][m - p][j - p][k - p]
        T[m][k][j] = v
    R = _zeros(K, K, K, K)
    for i, l, k, j in itertools.product(range(K), repeat=4):
        ih, lh = i < p, l < p
        if ih != lh:
            continue
        lab = "h" if ih else "v"
        ii, ll = (i, l) if ih else (i - p, l - p)
        kh, jh = k < p, j < p
        if kh and jh:
            v = cb["R_" + lab][ii][ll][j][k]
        elif not kh and jh:
            v = cb["P_" + lab][ii][ll][j][k - p]
        elif kh and not jh:
            v = ex.neg(cb["P_" + lab][ii][ll][k][j - p])
        else:
            v = cb["S_" + lab][ii][ll][j - p][k - p]
        R[i][l][k][j] = v
    return T, R


def _first(dc, Xh, Xv, p, r):
    """DX[i][j] = X^i_{;j} with adapted indices from the d-tensor derivatives."""
    K = p + r
    hh, hv = covariant_derivative(dc, Xh, "h"), covariant_derivative(dc, Xh, "v")
    vh, vv = covariant_derivative(dc, Xv, "h"), covariant_derivative(dc, Xv, "v")
    out = _zeros(K, K)
    for i in range(K):
        for j in range(K):
            if i < p:
                out[i][j] = hh[(i, j)] if j < p else hv[(i, j - p)]
            else:
                out[i][j] = vh[(i - p, j)] if j < p else vv[(i - p, j - p)]
    return out


def _second(dc, Xh, Xv, p, r):
    K = p + r
    out = _zeros(K, K, K)
    for src, off in ((Xh, 0), (Xv, p)):
        for k1 in ("h", "v"):
            D1 = covariant_derivative(dc, src, k1)
            for k2 in ("h", "v"):
                D2 = covariant_derivative(dc, D1, k2)
                for idx, val in D2.comps.items():
                    i, j, k = idx
                    jj = j if k1 == "h" else j + p
                    kk = k if k2 == "h" else k + p
                    out[i + off][jj][kk] = val
    return out


def metric_suite(gla, conn, dc: DistinguishedConnection, G: MetricStructure, samples: int = 100, seed: int = 0,
                 tol: float = 1e-9, box=None) -> CheckReport:
    rng = rng_for(seed)
    env = conn.sample(samples, rng, box)
    ev = ex.Evaluator(env)
    rep = CheckReport(f"metric {gla.name}")
    for nm, res in metric_residuals(dc, G).items():
        rep.add(f"metric_{nm}", eval_all(res, ev), tol)
    tb = d_torsion(gla, conn, dc)
    rep.add("T_h_zero", eval_all(list(_flatten(tb["T_h"])), ev), tol)
    rep.add("S_v_zero", eval_all(list(_flatten(tb["S_v"])), ev), tol)
    cond = G.condition_numbers(env)
    rep.values["max_condition_number"] = float(np.max(cond))
    if np.max(cond) > 1e8:
        import warnings
        warnings.warn("metric is ill-conditioned at some samples", ex.IllConditionedWarning, stacklevel=2)
    return rep
