"""Ready-made algebroids used by tests, demos and the shipped scenarios."""
from __future__ import annotations

import math

from . import expr as ex
from .algebroid import (GeneralizedLieAlgebroid, from_lie_algebroid, lie_algebroid, tm_h_algebroid)

X1, X2 = ex.var("x[1]"), ex.var("x[2]")


def levi_civita_symbol(a: int, b: int, c: int) -> int:
    return {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1, (0, 2, 1): -1, (2, 1, 0): -1, (1, 0, 2): -1}.get((a, b, c), 0)


def so3(h_shift: float = 0.0) -> GeneralizedLieAlgebroid:
    """so(3) over the real line: zero anchor, L^c_ab = eps_abc."""
    structure = {(c, a, b): ex.const(levi_civita_symbol(a, b, c))
                 for a in range(3) for b in range(3) for c in range(3) if levi_civita_symbol(a, b, c)}
    la = lie_algebroid([[ex.ZERO]] * 3, structure, 1, 3, {"x[1]": (-1.0, 1.0)}, "so3")
    if h_shift:
        return from_lie_algebroid(la, [X1 + h_shift])
    return la


def trivial(m: int = 2, box: dict | None = None, name: str = "trivial") -> GeneralizedLieAlgebroid:
    """Tangent Lie algebroid of R^m: identity anchor, zero structure."""
    anchor = [[ex.ONE if i == a else ex.ZERO for i in range(m)] for a in range(m)]
    box = box or {f"x[{i}]": (-1.0, 1.0) for i in range(1, m + 1)}
    return lie_algebroid(anchor, {}, m, m, box, name)


def sphere_base() -> GeneralizedLieAlgebroid:
    return trivial(2, {"x[1]": (0.2, 2.9), "x[2]": (-math.pi, math.pi)}, "sphere")


def translated(c=(0.5, -0.3)) -> GeneralizedLieAlgebroid:
    """TM with the h-twisted bracket for g = id and a translation h."""
    return tm_h_algebroid([X1, X2], [X1 + c[0], X2 + c[1]], [X1 - c[0], X2 - c[1]],
                          domain_box={"x[1]": (-1.0, 1.0), "x[2]": (-1.0, 1.0)}, name="translated")


def curved_h() -> GeneralizedLieAlgebroid:
    """TM with g = id and h(x1, x2) = (x1, x2 + x1^2)."""
    return tm_h_algebroid([X1, X2], [X1, X2 + X1 ** 2], [X1, X2 - X1 ** 2],
                          domain_box={"x[1]": (-1.0, 1.0), "x[2]": (-1.0, 1.0)}, name="curved_h")


def frame(shift=(0.5, -0.3)) -> GeneralizedLieAlgebroid:
    """Non-holonomic frame e1 = d1, e2 = (1 + x1^2) d2 on R^2, twisted by a translation h.

    [e1, e2] = 2 x1 / (1 + x1^2) e2, so the structure functions are not constant.
    """
    f = 1 + X1 ** 2
    anchor = [[ex.ONE, ex.ZERO], [ex.ZERO, f]]
    c = 2 * X1 / f
    la = lie_algebroid(anchor, {(1, 0, 1): c, (1, 1, 0): -c}, 2, 2,
                       {"x[1]": (-1.0, 1.0), "x[2]": (-1.0, 1.0)}, "frame")
    if shift is None:
        return la
    return from_lie_algebroid(la, [X1 + shift[0], X2 + shift[1]])


def corrupted() -> GeneralizedLieAlgebroid:
    """Deliberately broken: L^3_12 = L^3_21 = 1."""
    return lie_algebroid([[ex.ZERO]] * 3, {(2, 0, 1): ex.ONE, (2, 1, 0): ex.ONE}, 1, 3,
                         {"x[1]": (-1.0, 1.0)}, "corrupted")


ALL_GLA = {
    "so3": so3,
    "trivial": trivial,
    "translated": translated,
    "curved_h": curved_h,
    "frame": frame,
    "sphere": sphere_base,
}


def polar_base() -> GeneralizedLieAlgebroid:
    """Flat plane in polar coordinates (r, phi)."""
    return trivial(2, {"x[1]": (0.5, 2.0), "x[2]": (-math.pi, math.pi)}, "polar")


def diag(*entries):
    n = len(entries)
    return [[ex.as_expr(entries[i]) if i == j else ex.ZERO for j in range(n)] for i in range(n)]


def identity_metric(n: int):
    return diag(*([ex.ONE] * n))


# metric on the base of each fixture that carries one
METRICS = {
    "flat": lambda: identity_metric(2),
    "sphere": lambda: diag(ex.ONE, ex.sin(X1) ** 2),
    "polar": lambda: diag(ex.ONE, X1 ** 2),
    "so3": lambda: identity_metric(3),
    "translated": lambda: diag(1 + X1 ** 2, ex.ONE),
    "curved_h": lambda: diag(ex.ONE, 1 + X1 ** 2),
    "frame": lambda: diag(ex.ONE, 2 + ex.sin(X2)),
}

METRIC_GLA = {
    "flat": trivial,
    "sphere": sphere_base,
    "polar": polar_base,
    "so3": so3,
    "translated": translated,
    "curved_h": curved_h,
    "frame": frame,
}


def metric_fixture(name: str):
    """(gla, base metric) pair for the named metric fixture."""
    return METRIC_GLA[name](), METRICS[name]()


def zero_deflection_so3():
    """so(3) with the nonlinear connection Gamma^a_c = 1/2 L^a_ec y^e, whose deflection vanishes."""
    from .connection import NonlinearConnection
    la = so3()
    ys = [ex.var(f"y[{a}]") for a in range(1, 4)]
    G = [[ex.add_all(0.5 * la.L(a, e, c) * ys[e] for e in range(3) if not ex.is_zero(la.L(a, e, c)))
          for c in range(3)] for a in range(3)]
    return la, NonlinearConnection(la, G)


def kinetic_lagrangian(g, r: int | None = None, fiber: str = "y") -> ex.Expr:
    """1/2 g_ab(x) y^a y^b."""
    r = r or len(g)
    ys = [ex.var(f"{fiber}[{a}]") for a in range(1, r + 1)]
    return ex.mul(ex.const(0.5), ex.add_all(ex.mul_all([g[a][b], ys[a], ys[b]]) for a in range(r) for b in range(r)
                                            if not ex.is_zero(g[a][b])))


def quartic_lagrangian() -> ex.Expr:
    """1/4 y1^4 + 1/2 y1^2 + 1/2 y2^2."""
    y1, y2 = ex.var("y[1]"), ex.var("y[2]")
    return 0.25 * y1 ** 4 + 0.5 * y1 ** 2 + 0.5 * y2 ** 2
