"""Legendre duality between Lagrange and Hamilton systems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, NewtonError, NumericalError
from .algebroid import ConfigurationError, GTBSection, fiber_names
from .connection import NonlinearConnection, nonlinear_curvature
from .mechanics import HamiltonSystem, LagrangeSystem, el_rhs, hj_rhs, integrate
from .report import CheckReport, rng_for, sample_env


def _sum(terms) -> Expr:
    return ex.add_all(t for t in terms if not ex.is_zero(t))


@dataclass
class LegendrePair:
    lagrange: LagrangeSystem
    hamilton: HamiltonSystem
    max_iter: int = 50
    tol: float = 1e-12

    @property
    def gla(self):
        return self.lagrange.gla

    @property
    def r(self) -> int:
        return self.lagrange.r

    def to_dual(self) -> dict:
        """p_a = L_a(x, y): substitution map sending dual-chart fields to the Lagrange chart."""
        return dict(zip(self.hamilton.fiber, self.lagrange.K_a))

    def to_primal(self) -> dict:
        """y^a = H^a(x, p)."""
        return dict(zip(self.lagrange.fiber, self.hamilton.K_a))

    def compose_phi_L(self, e: Expr) -> Expr:
        """e o phi_L for a field e over (x, p)."""
        return ex.substitute(e, self.to_dual())

    def compose_phi_H(self, e: Expr) -> Expr:
        """e o phi_H for a field e over (x, y)."""
        return ex.substitute(e, self.to_primal())


def _as_states(state, dim):
    arr = np.asarray(state, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != dim:
        raise ConfigurationError(f"state needs {dim} values")
    return arr, single


def _fiber_map(sys, exprs, state):
    names = sys.coords
    arr, single = _as_states(state, len(names))
    env = {n: arr[:, k] for k, n in enumerate(names)}
    ev = ex.Evaluator(env)
    m = sys.gla.m
    out = np.column_stack([arr[:, :m]] + [ev.eval(e) for e in exprs])
    return out[0] if single else out


def phi_L(sys: LagrangeSystem, state) -> np.ndarray:
    """(x, y) -> (x, dL/dy)."""
    return _fiber_map(sys, sys.K_a, state)


def phi_H(sys: HamiltonSystem, state) -> np.ndarray:
    """(x, p) -> (x, dH/dp)."""
    return _fiber_map(sys, sys.K_a, state)


def _fiber_constant(exprs, fiber) -> bool:
    fib = set(fiber)
    return all(not (ex.free_vars(e) & fib) for e in exprs)


def legendre_hamiltonian(sys: LagrangeSystem, guesses: Sequence | None = None, max_iter: int = 50,
                         tol: float = 1e-12, morphism: str | Sequence = "auto") -> HamiltonSystem:
    """H(x, p) = p_a Y^a - L(x, Y) with Y solving L_a(x, Y) = p_a by damped Newton (initial guess Y = p).

    ``morphism='auto'`` pairs a fiber-quadratic L with g^{ab} = inverse Hessian (g~_ab = L_ab),
    which makes the Hamilton-Jacobi flow correspond to the Euler-Lagrange flow; otherwise identity.
    """
    r = sys.r
    pnames = fiber_names(r, dual=True)
    unknowns = tuple(f"u[{a}]" for a in range(1, r + 1))
    to_u = dict(zip(sys.fiber, [ex.var(u) for u in unknowns]))
    residuals = [ex.sub(ex.substitute(La, to_u), ex.var(pn)) for La, pn in zip(sys.K_a, pnames)]
    if guesses is None:
        guesses = [ex.var(pn) for pn in pnames]
    system = ex.ImplicitSystem(residuals, unknowns, [ex.as_expr(g) for g in guesses], max_iter, tol)
    Y = list(system.roots)
    LY = ex.substitute(sys.K, dict(zip(sys.fiber, Y)))
    H = ex.sub(_sum(ex.mul(ex.var(pn), y) for pn, y in zip(pnames, Y)), LY)
    g = ginv = None
    if isinstance(morphism, str):
        if morphism == "auto":
            hess = [c for row in sys.K_ab for c in row]
            if _fiber_constant(hess, sys.fiber):
                ginv = [list(row) for row in sys.K_ab]
                g = ex.inverse_matrix(ginv)
        elif morphism != "identity":
            raise ConfigurationError(f"unknown morphism rule {morphism!r}")
    else:
        g = morphism
    return HamiltonSystem(sys.gla, H, morphism=g, morphism_inv=ginv, regular=sys.regular,
                          name=(sys.name or sys.gla.name) + "*")


def legendre_pair(sys: LagrangeSystem, **kw) -> LegendrePair:
    H = legendre_hamiltonian(sys, **kw)
    return LegendrePair(sys, H, kw.get("max_iter", 50), kw.get("tol", 1e-12))


def tangent_phi(pair: LegendrePair, section: GTBSection | Sequence, direction: str = "L->H",
                chart: str = "source") -> GTBSection:
    """Push a GTB section forward by the tangent map of phi_L ('L->H') or phi_H ('H->L').

    L->H: (Z, Y) -> (Z, rho_a(L_b) Z^a + Y^a L_ab);  H->L: (Z, Y) -> (Z, rho_a(H^b) Z^a + Y_a H^ab).
    The coefficients live on the source chart; with ``chart='target'`` they are composed with the
    inverse Legendre map, so a section written in target coordinates can be pushed back.
    """
    r = pair.r
    comps = section.components if isinstance(section, GTBSection) else [ex.as_expr(c) for c in section]
    if len(comps) != 2 * r:
        raise ConfigurationError("section needs p + r components")
    if direction in ("L->H", "L"):
        src = pair.lagrange
    elif direction in ("H->L", "H"):
        src = pair.hamilton
    else:
        raise ConfigurationError("direction must be 'L->H' or 'H->L'")
    A = pair.gla.on_M
    Z, Y = comps[:r], comps[r:]
    coef_h = [[A.act(a, src.K_a[b]) for b in range(r)] for a in range(r)]
    coef_v = src.K_ab
    if chart == "target":
        comp = pair.compose_phi_H if src is pair.lagrange else pair.compose_phi_L
        coef_h = [[comp(c) for c in row] for row in coef_h]
        coef_v = [[comp(c) for c in row] for row in coef_v]
    vert = [_sum([ex.mul(Z[a], coef_h[a][b]) for a in range(r)] + [ex.mul(Y[a], coef_v[a][b]) for a in range(r)])
            for b in range(r)]
    return GTBSection(list(Z), vert)


def _eval_batch(exprs, env, names):
    """Evaluate exprs at all samples; Newton failures are isolated per sample (NaN)."""
    npts = len(next(iter(env.values())))
    try:
        ev = ex.Evaluator(env)
        return np.stack([ev.eval(e) for e in exprs]), np.ones(npts, bool)
    except NumericalError:
        out = np.full((len(exprs), npts), np.nan)
        ok = np.zeros(npts, bool)
        for k in range(npts):
            sub = {n: v[k:k + 1] for n, v in env.items()}
            try:
                ev = ex.Evaluator(sub)
                out[:, k] = [ev.eval(e)[0] for e in exprs]
                ok[k] = True
            except NumericalError:
                pass
        return out, ok


def _sample(pair, dual, samples, rng, box):
    sys = pair.hamilton if dual else pair.lagrange
    b = dict(pair.gla.domain_box)
    if box:
        b.update(box)
    return sample_env(b, sys.coords, samples, rng)


def involution_check(pair: LegendrePair, samples: int = 100, seed: int = 0, tol: float = 1e-10,
                     box=None, energy_tol: float | None = None) -> CheckReport:
    """phi_H o phi_L = Id and phi_L o phi_H = Id on fibers, plus H o phi_L = E_L and E_H o phi_L = L."""
    rng = rng_for(seed)
    r = pair.r
    rep = CheckReport("involution")
    L, H = pair.lagrange, pair.hamilton
    envL = _sample(pair, False, samples, rng, box)
    back = [ex.sub(pair.compose_phi_L(Ha), ex.var(y)) for Ha, y in zip(H.K_a, L.fiber)]
    res, ok = _eval_batch(back, envL, L.coords)
    rep.add("phi_H_after_phi_L", res[:, ok], tol)
    cov = [float(ok.mean())]
    envH = _sample(pair, True, samples, rng, box)
    fwd = [ex.sub(pair.compose_phi_H(La), ex.var(p)) for La, p in zip(L.K_a, H.fiber)]
    res, ok = _eval_batch(fwd, envH, H.coords)
    rep.add("phi_L_after_phi_H", res[:, ok], tol)
    cov.append(float(ok.mean()))
    en = [ex.sub(L.energy(), pair.compose_phi_L(H.K)), ex.sub(L.K, pair.compose_phi_L(H.energy()))]
    res, ok = _eval_batch(en, envL, L.coords)
    rep.add("energy_correspondence", res[:, ok], energy_tol if energy_tol is not None else tol)
    rep.values["newton_coverage"] = min(cov)
    return rep


def dual_connection_from(pair: LegendrePair, conn: NonlinearConnection) -> NonlinearConnection:
    """Gamma*_{b alpha} = [rho_alpha(L_b) - Gamma^a_alpha L_ab] o phi_H."""
    r, p = pair.r, pair.gla.p
    A = pair.gla.on_M
    L = pair.lagrange
    comps = [[pair.compose_phi_H(_sum([A.act(al, L.K_a[b])]
                                      + [ex.neg(ex.mul(conn.Gamma[a][al], L.K_ab[a][b])) for a in range(r)]))
              for al in range(p)] for b in range(r)]
    return NonlinearConnection(pair.gla, comps, dual=True)


def duality_checks(pair: LegendrePair, Gamma: NonlinearConnection, Gamma_star: NonlinearConnection,
                   samples: int = 100, seed: int = 0, tol: float = 1e-8, hessian_tol: float = 1e-9,
                   box=None) -> CheckReport:
    """Connection, Hessian and curvature duality residuals (curvature in both directions)."""
    if Gamma.dual or not Gamma_star.dual:
        raise ConfigurationError("need a primal connection and a dual connection")
    rng = rng_for(seed)
    r, p = pair.r, pair.gla.p
    L, H = pair.lagrange, pair.hamilton
    A = pair.gla.on_M
    envL = _sample(pair, False, samples, rng, box)
    envH = _sample(pair, True, samples, rng, box)
    rep = CheckReport("legendre_duality")

    conn_res = []
    for b in range(r):
        for al in range(p):
            rhs = _sum([A.act(al, L.K_a[b])] + [ex.neg(ex.mul(Gamma.Gamma[a][al], L.K_ab[a][b])) for a in range(r)])
            conn_res.append(ex.sub(Gamma_star.Gamma[b][al], pair.compose_phi_H(rhs)))
    res, ok = _eval_batch(conn_res, envH, H.coords)
    rep.add("connection_duality", res[:, ok], tol)

    Linv = L.hessian_inverse
    hres = [ex.sub(Linv[a][b], pair.compose_phi_L(H.K_ab[a][b])) for a in range(r) for b in range(r)]
    res, ok = _eval_batch(hres, envL, L.coords)
    rep.add("hessian_duality_L", res[:, ok], hessian_tol)
    Hinv = H.hessian_inverse
    hres = [ex.sub(Hinv[a][b], pair.compose_phi_H(L.K_ab[a][b])) for a in range(r) for b in range(r)]
    res, ok = _eval_batch(hres, envH, H.coords)
    rep.add("hessian_duality_H", res[:, ok], hessian_tol)

    R = nonlinear_curvature(pair.gla, Gamma)
    Rs = nonlinear_curvature(pair.gla, Gamma_star)
    cres = []
    for b in range(r):
        for al in range(p):
            for be in range(p):
                paired = _sum(ex.mul(R[a][al][be], L.K_ab[a][b]) for a in range(r))
                cres.append(ex.sub(Rs[b][al][be], pair.compose_phi_H(paired)))
    res, ok = _eval_batch(cres, envH, H.coords)
    rep.add("curvature_duality_at_phi_H", res[:, ok], tol)
    cres = []
    for a in range(r):
        for al in range(p):
            for be in range(p):
                paired = _sum(ex.mul(Rs[b][al][be], H.K_ab[b][a]) for b in range(r))
                cres.append(ex.sub(R[a][al][be], pair.compose_phi_L(paired)))
    res, ok = _eval_batch(cres, envL, L.coords)
    rep.add("curvature_duality_at_phi_L", res[:, ok], tol)
    return rep


def trajectory_match(pair: LegendrePair, initial, dt: float, steps: int) -> dict:
    """Integrate EL from (x0, y0) and HJ from phi_L(x0, y0); compare phi_L of the EL path with the HJ path."""
    gla = pair.gla
    el = integrate(el_rhs(gla, pair.lagrange), initial, dt, steps)
    start = phi_L(pair.lagrange, np.asarray(initial, dtype=float))
    hj = integrate(hj_rhs(gla, pair.hamilton), start, dt, steps)
    mapped = phi_L(pair.lagrange, el.states)
    dev = float(np.max(np.abs(mapped - hj.states)))
    return {"el": el, "hj": hj, "max_deviation": dev}
