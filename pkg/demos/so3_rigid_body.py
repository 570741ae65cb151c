"""
The free rigid body on so(3)
============================

so(3) over a point is a Lie algebroid with zero anchor and structure functions
epsilon_abc.  With the bi-invariant metric the canonical spray vanishes, so the
angular velocity is constant; with an anisotropic inertia tensor the Euler-Lagrange
flow reproduces Euler's equations.
"""
import numpy as np

from gla import connection as cn
from gla import expr as ex
from gla import fixtures as fx
from gla import mechanics as me
from gla.algebroid import validate

la = fx.so3()
print(validate(la, samples=100).summary())

# %% Bi-invariant metric: constant angular velocity
sys = me.LagrangeSystem(la, fx.kinetic_lagrangian(fx.identity_metric(3)))
traj = me.integrate(me.el_rhs(la, sys), [0.0, 0.3, -0.2, 0.5], 1e-2, 500)
print("initial", traj.states[0, 1:], "final", traj.final[1:])

# %% Anisotropic inertia: Euler's equations I w' = (I w) x w
inertia = (1.0, 2.0, 3.0)
L = fx.kinetic_lagrangian(fx.diag(*inertia))
sys = me.LagrangeSystem(la, L)
traj = me.integrate(me.el_rhs(la, sys), [0.0, 0.1, 1.0, 0.1], 1e-3, 5000)
w = traj.states[:, 1:]
I = np.array(inertia)
momentum = np.linalg.norm(w * I, axis=1)
print(f"energy drift {traj.energy_drift():.2e}, |I w| drift {np.ptp(momentum):.2e}")

# the vector field at one point against Euler's equations
w0 = np.array([0.4, -0.2, 0.7])
rhs = me.el_rhs(la, sys)
got = rhs(np.concatenate([[0.0], w0]))[1:]
euler = np.cross(I * w0, w0) / I
print("flow:", got, "Euler:", euler)

# %% The Levi-Civita-type connection of the bi-invariant metric
lc = cn.levi_civita_rho(la, fx.identity_metric(3))
print("Gamma^3_12 =", ex.evaluate(lc.Gamma[2][0][1], {"x[1]": 0.0}), " scalar curvature =",
      ex.evaluate(cn.scalar_curvature_linear(lc, lc.metric_inverse), {"x[1]": 0.0}))
