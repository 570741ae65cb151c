"""
Geodesics and holonomy on the round sphere
==========================================

The tangent bundle of the sphere, seen as a Lie algebroid with identity anchor,
carries the round metric g = diag(1, sin^2 theta).  We build its Levi-Civita-type
connection, integrate the Euler-Lagrange flow of the kinetic Lagrangian and carry a
vector around a latitude circle.
"""
import math

import numpy as np

from gla import connection as cn
from gla import expr as ex
from gla import fixtures as fx
from gla import mechanics as me

# %% Christoffel symbols and curvature
gla, g = fx.metric_fixture("sphere")
lc = cn.levi_civita_rho(gla, g)
pt = {"x[1]": 1.0, "x[2]": 0.0}
print("Gamma^1_22 =", ex.render(lc.Gamma[0][1][1]))
print("Gamma^2_12 =", ex.render(lc.Gamma[1][0][1]))
print("scalar curvature at theta=1:", ex.evaluate(cn.scalar_curvature_linear(lc, lc.metric_inverse), pt))

# %% A geodesic is a great circle
sys = me.LagrangeSystem(gla, fx.kinetic_lagrangian(g))
traj = me.integrate(me.el_rhs(gla, sys), [1.0, 0.0, 0.3, 0.5], 1e-3, 10_000)


def unit(th, ph):
    return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])


# plane of the great circle through the start point with the start velocity
tangent = 0.3 * np.array([math.cos(1.0), 0.0, -math.sin(1.0)]) + 0.5 * math.sin(1.0) * np.array([0, 1.0, 0])
normal = np.cross(unit(1.0, 0.0), tangent)
normal /= np.linalg.norm(normal)
off_plane = max(abs(normal @ unit(th, ph)) for th, ph in traj.states[:, :2])
print(f"distance from the great-circle plane over t=10: {off_plane:.2e}")
print(f"energy drift: {traj.energy_drift():.2e}")

# %% Holonomy of a latitude loop
t = ex.var("t")
for th0 in (0.4, 0.8, 1.2):
    steps = 2000
    pt_traj = me.parallel_transport(gla, lc, [ex.const(th0), t], [1.0, 0.0], 2 * math.pi / steps, steps, metric=g)
    u1, u2 = pt_traj.final[:2]
    angle = math.atan2(math.sin(th0) * u2, u1) % (2 * math.pi)
    expected = 2 * math.pi * (1 - math.cos(th0))
    print(f"theta0={th0}: rotation {angle:.8f}, enclosed area {expected:.8f}")
