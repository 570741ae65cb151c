"""Mechanical systems on generalized Lie algebroids: semisprays, Euler-Lagrange and Hamilton-Jacobi flows.

Lagrange and Hamilton systems share one engine.  With the kinetic function K (L or H),
fiber coordinates v (y or p), the fiber morphism g and its inverse g~:

    theta_a = g~[e][a] K_e                   (Poincare-Cartan 1-form on the horizontal block)
    X^a     = g[a][e] v_e                    (horizontal part of the semispray)
    E'_b    = rho_b(K) - X^a rho_a(theta_b) + X^a L^d_ab theta_d + X^a rho_b(theta_a) - v^a rho_b(K_a)

and the vertical part S^a of the unique solution of i_S omega = -d(energy) solves
g~[e][b] K_ea S^a = E'_b.  For a fiber-constant morphism the last two terms of E'
cancel and E' is the printed E_b(L, g, h).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, ZERO, ONE, NumericalError
from .algebroid import ConfigurationError, GeneralizedLieAlgebroid, fiber_names, gtb
from .forms import ExteriorForm, d as ext_d, interior, one_form, zero_form, difference
from .report import CheckReport, eval_all, rng_for, sample_env


class RegularityError(NumericalError):
    """Hessian rank deficit at a sample of a system declared regular."""


def _sum(terms) -> Expr:
    return ex.add_all(t for t in terms if not ex.is_zero(t))


def _identity(n):
    return [[ONE if i == j else ZERO for j in range(n)] for i in range(n)]


class _System:
    fiber_letter = "y"
    dual = False

    def __init__(self, gla: GeneralizedLieAlgebroid, K, force=None, morphism=None, morphism_inv=None,
                 connection=None, regular: bool = True, name: str = ""):
        if not gla.same_base:
            raise ConfigurationError("mechanical systems are modelled with N = M")
        self.gla = gla
        self.r = gla.p
        self.fiber = fiber_names(self.r, self.dual)
        self.K = ex.as_expr(K)
        self.force = [ex.as_expr(f) for f in force] if force is not None else [ZERO] * self.r
        if len(self.force) != self.r:
            raise ConfigurationError(f"force needs {self.r} components")
        if morphism is None:
            self.g = _identity(self.r)
            self.ginv = self.g
        else:
            self.g = [[ex.as_expr(c) for c in row] for row in morphism]
            if len(self.g) != self.r or any(len(row) != self.r for row in self.g):
                raise ConfigurationError(f"morphism must be {self.r}x{self.r}")
            self.ginv = ([[ex.as_expr(c) for c in row] for row in morphism_inv] if morphism_inv is not None
                         else ex.inverse_matrix(self.g))
        self.connection = connection
        self.regular = regular
        self.name = name
        vs = self.fiber
        self.v = [ex.var(n) for n in vs]
        self.K_a = [ex.differentiate(self.K, n) for n in vs]
        self.K_ab = [[ex.differentiate(ka, n) for n in vs] for ka in self.K_a]
        self._hess_inv = None

    @property
    def coords(self) -> tuple:
        return tuple(self.gla.base_names) + self.fiber

    @property
    def hessian_inverse(self):
        if self._hess_inv is None:
            self._hess_inv = ex.inverse_matrix(self.K_ab)
        return self._hess_inv

    def sample(self, samples, rng, box=None):
        b = dict(self.gla.domain_box)
        if box:
            b.update(box)
        return sample_env(b, self.coords, samples, rng)

    # shared derived objects -------------------------------------------------
    def theta(self) -> list[Expr]:
        r = self.r
        return [_sum(ex.mul(self.ginv[e][a], self.K_a[e]) for e in range(r)) for a in range(r)]

    def horizontal(self) -> list[Expr]:
        r = self.r
        return [_sum(ex.mul(self.g[a][e], self.v[e]) for e in range(r)) for a in range(r)]

    def energy(self) -> Expr:
        return ex.sub(_sum(ex.mul(v, k) for v, k in zip(self.v, self.K_a)), self.K)

    def E_printed(self) -> list[Expr]:
        """rho_b(K) - X^a rho_a(theta_b) + X^a L^d_ab theta_d."""
        A = self.gla.on_M
        r, th, X = self.r, self.theta(), self.horizontal()
        out = []
        for b in range(r):
            terms = [A.act(b, self.K)]
            for a in range(r):
                terms.append(ex.neg(ex.mul(X[a], A.act(a, th[b]))))
                for dd in range(r):
                    L = A.C(dd, a, b)
                    if not ex.is_zero(L):
                        terms.append(ex.mul_all([X[a], L, th[dd]]))
            out.append(_sum(terms))
        return out

    def E_exact(self) -> list[Expr]:
        A = self.gla.on_M
        r, th, X = self.r, self.theta(), self.horizontal()
        E = self.E_printed()
        out = []
        for b in range(r):
            terms = [E[b]]
            for a in range(r):
                terms.append(ex.mul(X[a], A.act(b, th[a])))
                terms.append(ex.neg(ex.mul(self.v[a], A.act(b, self.K_a[a]))))
            out.append(_sum(terms))
        return out

    def vertical_solution(self) -> list[Expr]:
        """S^a with g~[e][b] K_ea S^a = E'_b."""
        r = self.r
        M = [[_sum(ex.mul(self.ginv[e][b], self.K_ab[e][a]) for e in range(r)) for a in range(r)] for b in range(r)]
        Minv = ex.inverse_matrix(M)
        E = self.E_exact()
        return [_sum(ex.mul(Minv[a][b], E[b]) for b in range(r)) for a in range(r)]

    def gtb(self):
        return gtb(self.gla, self.r, self.dual)


class LagrangeSystem(_System):
    """Lagrangian L(x, y) with optional force F^a, fiber morphism g^a_b (inverse g~) and connection."""

    fiber_letter = "y"
    dual = False

    def __init__(self, gla, L, force=None, morphism=None, morphism_inv=None, connection=None,
                 regular: bool = True, name: str = ""):
        super().__init__(gla, L, force, morphism, morphism_inv, connection, regular, name)

    @property
    def L(self) -> Expr:
        return self.K


class HamiltonSystem(_System):
    """Hamiltonian H(x, p) with optional force F_a, morphism g^{ab} (inverse g~_ab) and dual connection."""

    fiber_letter = "p"
    dual = True

    def __init__(self, gla, H, force=None, morphism=None, morphism_inv=None, connection=None,
                 regular: bool = True, name: str = ""):
        super().__init__(gla, H, force, morphism, morphism_inv, connection, regular, name)

    @property
    def H(self) -> Expr:
        return self.K


def energy(sys: _System) -> Expr:
    """E_L = y^a L_a - L, or E_H = p_a H^a - H."""
    return sys.energy()


def regularity(sys: _System, samples: int = 100, seed: int = 0, box=None, env: dict | None = None) -> dict:
    """Hessian rank per sample (SVD) and the pointwise inverse where it has full rank."""
    rng = rng_for(seed)
    env = env or sys.sample(samples, rng, box)
    ev = ex.Evaluator(env)
    r = sys.r
    Hs = eval_all([c for row in sys.K_ab for c in row], ev).T.reshape(-1, r, r)
    ranks = np.linalg.matrix_rank(Hs)
    inverse = np.full_like(Hs, np.nan)
    full = ranks == r
    if np.any(full):
        inverse[full] = np.linalg.inv(Hs[full])
    if sys.regular and not np.all(full):
        k = int(np.argmin(full))
        point = {n: float(env[n][k]) for n in env}
        raise RegularityError(f"Hessian has rank {int(ranks[k])} < {r} at a sample of a regular system", point)
    return {"ranks": ranks, "min_rank": int(ranks.min()), "inverse": inverse, "hessian": Hs, "env": env}


def poincare_cartan(gla, sys: _System) -> dict:
    """theta (horizontal components), the 2-form omega = d theta and its closed-form blocks."""
    T = sys.gtb()
    r = sys.r
    A = gla.on_M
    th = sys.theta()
    theta = one_form(T, th + [ZERO] * r)
    omega = ext_d(T, theta)
    hh = [[_sum([A.act(a, th[b]), ex.neg(A.act(b, th[a]))]
                + [ex.neg(ex.mul(A.C(c, a, b), th[c])) for c in range(r)]) for b in range(r)] for a in range(r)]
    hv = [[ex.neg(_sum(ex.mul(sys.ginv[e][a], sys.K_ab[e][b]) for e in range(r))) for b in range(r)]
          for a in range(r)]
    vv = [[ZERO] * r for _ in range(r)]
    return {"theta": th, "theta_form": theta, "omega": omega, "blocks": {"hh": hh, "hv": hv, "vv": vv}}


def canonical_semispray_lagrange(gla, sys: _System) -> dict:
    """Canonical semispray of i_S omega = -dE, its G^a, the E_b fields and the induced connection.

    G^a = -1/2 S^a (conservative part) so that -2(G - F/4) = S + F/2 on the vertical block.
    """
    r = sys.r
    S_vert = sys.vertical_solution()
    X = sys.horizontal()
    G = [ex.mul(ex.const(-0.5), s) for s in S_vert]
    vertical = [_sum([s, ex.mul(ex.const(0.5), f)]) for s, f in zip(S_vert, sys.force)]
    A = gla.on_M
    Gq = [ex.sub(G[a], ex.mul(ex.const(0.25), sys.force[a])) for a in range(r)]
    Gamma = [[_sum([_sum(ex.mul(sys.ginv[e][c], ex.differentiate(Gq[a], sys.fiber[e])) for e in range(r))]
                   + [ex.neg(ex.mul_all([ex.const(0.5), X[dd], A.C(b, dd, c), sys.ginv[a][b]]))
                      for dd in range(r) for b in range(r) if not ex.is_zero(A.C(b, dd, c))])
              for c in range(r)] for a in range(r)]
    return {"G": G, "E": sys.E_printed(), "E_exact": sys.E_exact(), "semispray": X + vertical,
            "conservative_semispray": X + S_vert, "Gamma": Gamma}


def canonical_semispray_force(gla, sys: _System, Gamma=None) -> dict:
    """Spray built from a nonlinear connection: 2(G - F/4)^a = Gamma^a_c X^c, S = X d~ - 2(G - F/4) d."""
    if Gamma is None:
        if sys.connection is None:
            raise ConfigurationError("canonical_semispray_force needs a connection")
        Gamma = sys.connection.Gamma
    r = sys.r
    A = gla.on_M
    X = sys.horizontal()
    Gamma = [[ex.as_expr(c) for c in row] for row in Gamma]
    dG = [[_sum([_sum(ex.mul(sys.g[c][e], Gamma[a][c]) for c in range(r))]
                + [ex.mul_all([ex.const(0.5), sys.g[c][e], X[dd], A.C(b, dd, c), sys.ginv[a][b]])
                   for c in range(r) for dd in range(r) for b in range(r) if not ex.is_zero(A.C(b, dd, c))])
           for e in range(r)] for a in range(r)]  # d(G - F/4)^a / dy^e
    twoGq = [_sum(ex.mul(Gamma[a][c], X[c]) for c in range(r)) for a in range(r)]
    G = [ex.add(ex.mul(ex.const(0.5), twoGq[a]), ex.mul(ex.const(0.25), sys.force[a])) for a in range(r)]
    return {"dG": dG, "G": G, "semispray": X + [ex.neg(t) for t in twoGq]}


def liouville(sys: _System) -> list[Expr]:
    return [ZERO] * sys.r + list(sys.v)


def semispray_checks(gla, sys: _System, samples: int = 100, seed: int = 0, tol_js: float = 1e-12,
                     tol_eq: float = 1e-8, box=None) -> CheckReport:
    """J(S) = C and i_S omega + dE = 0 for the conservative canonical semispray."""
    r = sys.r
    res = canonical_semispray_lagrange(gla, sys)
    S = res["conservative_semispray"]
    T = sys.gtb()
    js = [ex.sub(_sum(ex.mul(sys.ginv[b][a], S[a]) for a in range(r)), sys.v[b]) for b in range(r)]
    pc = poincare_cartan(gla, sys)
    lhs = interior(S, pc["omega"]) + ext_d(T, zero_form(T, sys.energy()))
    eq = lhs.components()
    blocks = pc["blocks"]
    om = pc["omega"]
    bres = []
    for a in range(r):
        for b in range(r):
            bres.append(ex.sub(om[(a, b)], blocks["hh"][a][b]))
            bres.append(ex.sub(om[(a, r + b)], blocks["hv"][a][b]))
            bres.append(om[(r + a, r + b)])
    rng = rng_for(seed)
    ev = ex.Evaluator(sys.sample(samples, rng, box))
    rep = CheckReport("semispray")
    rep.add("J_S_eq_C", eval_all(js, ev), tol_js)
    rep.add("semispray_equation", eval_all(eq, ev), tol_eq)
    rep.add("omega_blocks", eval_all(bres, ev), tol_eq)
    return rep


# ---------------------------------------------------------------------------
# vector fields and integration


@dataclass
class VectorField:
    """Autonomous ODE dz/dt = f(z) over named state coordinates, with an optional diagnostic."""

    names: tuple
    exprs: list
    diagnostic: Expr | None = None
    label: str = ""
    kind: str = "state"

    def __post_init__(self):
        self.names = tuple(self.names)
        self.exprs = [ex.as_expr(e) for e in self.exprs]
        if len(self.exprs) != len(self.names):
            raise ConfigurationError("vector field needs one component per state coordinate")
        self._f = ex.compile_exprs(self.exprs, self.names)
        self._diag = ex.compile_exprs([self.diagnostic], self.names) if self.diagnostic is not None else None

    def __call__(self, z) -> np.ndarray:
        return self._f(z)

    def diag(self, z) -> float:
        return float(self._diag(z)[0]) if self._diag is not None else float("nan")


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    names: tuple
    energy: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]

    def energy_drift(self) -> float:
        e = self.energy
        if not np.all(np.isfinite(e)):
            return float("nan")
        return float(np.max(np.abs(e - e[0])))

    def header(self) -> list[str]:
        return ["t"] + [n.replace("[", "").replace("]", "") for n in self.names] + ["E"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for t, z, e in zip(self.t, self.states, self.energy):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in z] + [repr(float(e))])

    def to_dict(self) -> dict:
        return {"label": self.label, "columns": self.header(),
                "rows": [[float(t)] + [float(v) for v in z] + [float(e)]
                         for t, z, e in zip(self.t, self.states, self.energy)],
                "meta": self.meta}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def integrate(rhs: VectorField, initial, dt: float, steps: int, t0: float = 0.0) -> Trajectory:
    """Classical fixed-step RK4."""
    z = np.asarray(initial, dtype=float)
    if z.shape != (len(rhs.names),):
        raise ConfigurationError(f"initial state needs {len(rhs.names)} values")
    if steps < 1 or not dt > 0:
        raise ConfigurationError("need steps >= 1 and dt > 0")
    states = np.empty((steps + 1, z.size))
    energy = np.empty(steps + 1)
    states[0] = z
    energy[0] = rhs.diag(z)
    h = float(dt)
    for n in range(steps):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"non-finite state at step {n + 1}", dict(zip(rhs.names, z)))
        states[n + 1] = z
        energy[n + 1] = rhs.diag(z)
    t = t0 + h * np.arange(steps + 1)
    return Trajectory(t, states, rhs.names, energy, rhs.label, {"dt": h, "steps": steps})


def _flow(gla, sys: _System, label: str) -> VectorField:
    A = gla.on_M
    X = sys.horizontal()
    base = [_sum(ex.mul(A.anchor[a][i], X[a]) for a in range(sys.r)) for i in range(gla.m)]
    vertical = canonical_semispray_lagrange(gla, sys)["semispray"][sys.r:]
    return VectorField(sys.coords, base + vertical, sys.energy(), label)


def el_rhs(gla, sys: LagrangeSystem) -> VectorField:
    """dx^i/dt = (rho o h)^i_a g^a_b y^b,  dy^a/dt = S^a + F^a / 2."""
    return _flow(gla, sys, f"EL {sys.name or gla.name}")


def hj_rhs(gla, sys: HamiltonSystem) -> VectorField:
    """dx^i/dt = (rho o h)^i_a g^{ae} p_e,  dp_a/dt = S_a + F_a / 2."""
    return _flow(gla, sys, f"HJ {sys.name or gla.name}")


def parallel_transport(gla, lc, curve: Sequence, initial, dt: float, steps: int, valence=(1, 0),
                       velocity: Sequence | None = None, t0: float = 0.0, metric=None) -> Trajectory:
    """Transport a (1,0), (0,1) or (1,1) tensor along x = c(t) by RK4.

    ``curve`` gives x^i as Exprs in the variable ``t``; the algebroid velocity z^alpha solves
    (rho o h)^i_alpha z^alpha = dc^i/dt unless given.  With ``metric`` the diagnostic column is
    g(u, u) (vectors) or g^{-1}(w, w) (covectors).
    """
    p, m = gla.p, gla.m
    tvar = ex.var("t")
    curve = [ex.as_expr(c) for c in curve]
    if len(curve) != m:
        raise ConfigurationError(f"curve needs {m} components")
    on_curve = dict(zip(gla.base_names, curve))
    if velocity is None:
        if p != m:
            raise ConfigurationError("velocity components required when p != m")
        cdot = [ex.differentiate(c, "t") for c in curve]
        anchorT = [[ex.substitute(gla.on_M.anchor[a][i], on_curve) for a in range(p)] for i in range(m)]
        inv = ex.inverse_matrix(anchorT)
        velocity = [_sum(ex.mul(inv[a][i], cdot[i]) for i in range(m)) for a in range(p)]
    z = [ex.as_expr(v) for v in velocity]
    G = [[[ex.substitute(lc.Gamma[a][b][al], on_curve) for al in range(p)] for b in range(p)] for a in range(p)]
    conn = [[_sum(ex.mul(G[a][b][al], z[al]) for al in range(p)) for b in range(p)] for a in range(p)]  # A^a_b
    valence = tuple(valence)
    if valence == (1, 0):
        names = [f"u[{a + 1}]" for a in range(p)]
        u = [ex.var(n) for n in names]
        rhs = [ex.neg(_sum(ex.mul(conn[a][b], u[b]) for b in range(p))) for a in range(p)]
    elif valence == (0, 1):
        names = [f"w[{a + 1}]" for a in range(p)]
        u = [ex.var(n) for n in names]
        rhs = [_sum(ex.mul(conn[a][b], u[a]) for a in range(p)) for b in range(p)]
    elif valence == (1, 1):
        names = [f"u[{a + 1},{b + 1}]" for a in range(p) for b in range(p)]
        U = [[ex.var(f"u[{a + 1},{b + 1}]") for b in range(p)] for a in range(p)]
        rhs = [_sum([ex.neg(ex.mul(conn[a][c], U[c][b])) for c in range(p)]
                    + [ex.mul(conn[c][b], U[a][c]) for c in range(p)]) for a in range(p) for b in range(p)]
    else:
        raise ConfigurationError("parallel transport supports valence (1,0), (0,1) and (1,1)")
    diag = None
    if metric is not None and valence != (1, 1):
        gm = [[ex.substitute(ex.as_expr(c), on_curve) for c in row] for row in metric]
        if valence == (0, 1):
            gm = ex.inverse_matrix(gm)
        u = [ex.var(n) for n in names]
        diag = _sum(ex.mul_all([gm[a][b], u[a], u[b]]) for a in range(p) for b in range(p))
    field_ = VectorField(tuple(names) + ("t",), rhs + [ONE], diag, "transport")
    init = list(np.asarray(initial, dtype=float).ravel()) + [t0]
    traj = integrate(field_, init, dt, steps, t0)
    return traj
