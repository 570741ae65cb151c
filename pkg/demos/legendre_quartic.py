"""
Legendre duality for a non-quadratic Lagrangian
===============================================

For L = y1^4/4 + y1^2/2 + y2^2/2 the fiber derivative p = dL/dy is invertible but
nonlinear, so the Hamiltonian is defined through a Newton solve.  The involution and
Hessian duality checks run on sampled points.
"""
import numpy as np

from gla import connection as cn
from gla import expr as ex
from gla import fixtures as fx
from gla import legendre as lg
from gla import mechanics as me

box = {"x[1]": (-1, 1), "x[2]": (-1, 1), "y[1]": (-2, 2), "y[2]": (-2, 2), "p[1]": (-3, 3), "p[2]": (-3, 3)}
gla = fx.trivial(2, box)
pair = lg.legendre_pair(me.LagrangeSystem(gla, fx.quartic_lagrangian()))

# %% Point evaluations: y1 = 1 gives p1 = 2, and back
print("phi_L(0, 0, 1, 0) =", lg.phi_L(pair.lagrange, [0, 0, 1.0, 0.0]))
print("phi_H(0, 0, 2, 0) =", lg.phi_H(pair.hamilton, [0, 0, 2.0, 0.0]))
print("H(p = (2, 0)) =", ex.evaluate(pair.hamilton.H, {"x[1]": 0, "x[2]": 0, "p[1]": 2.0, "p[2]": 0.0}))

# %% Sampled involution and Hessian duality
print(lg.involution_check(pair, samples=200, seed=1, tol=1e-9).summary())
z = cn.zero_connection(gla)
print(lg.duality_checks(pair, z, lg.dual_connection_from(pair, z), samples=200, seed=2).summary())

# %% Quadratic case: Euler-Lagrange and Hamilton-Jacobi trajectories coincide
gla_s, g = fx.metric_fixture("sphere")
sphere_pair = lg.legendre_pair(me.LagrangeSystem(gla_s, fx.kinetic_lagrangian(g)))
out = lg.trajectory_match(sphere_pair, [1.0, 0.0, 0.3, 0.5], 1e-3, 1000)
print(f"sphere EL vs HJ after 1000 steps: {out['max_deviation']:.2e}")
