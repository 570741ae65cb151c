import math

import numpy as np
import pytest

from gla import expr as ex
from gla import fixtures as fx
from gla import connection as cn
from gla import mechanics as me
from gla.algebroid import GTBSection, gtb_bracket
from gla.report import eval_all, rng_for

Y1, Y2 = ex.var("y[1]"), ex.var("y[2]")


def _sys(name, **kw):
    gla, g = fx.metric_fixture(name)
    return gla, me.LagrangeSystem(gla, fx.kinetic_lagrangian(g), **kw)


def _unit(th, ph):
    return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])


def _tangent(th, ph, dth, dph):
    return (dth * np.array([math.cos(th) * math.cos(ph), math.cos(th) * math.sin(ph), -math.sin(th)])
            + dph * math.sin(th) * np.array([-math.sin(ph), math.cos(ph), 0.0]))


# -- static structure --------------------------------------------------------------

def test_energy_examples():
    gla = fx.trivial()
    L = ex.parse("0.5*(y[1]^2 + y[2]^2) - x[1]^2")
    E = me.energy(me.LagrangeSystem(gla, L))
    pt = {"x[1]": 0.3, "x[2]": 0.0, "y[1]": 0.5, "y[2]": -1.0}
    assert ex.evaluate(E, pt) == pytest.approx(0.5 * 1.25 + 0.09)
    H = me.HamiltonSystem(gla, ex.parse("0.5*(p[1]^2 + p[2]^2)"))
    assert ex.evaluate(me.energy(H), {"x[1]": 0, "x[2]": 0, "p[1]": 1.0, "p[2]": 2.0}) == pytest.approx(2.5)


def test_regularity():
    gla, sys = _sys("sphere")
    out = me.regularity(sys, samples=50)
    assert out["min_rank"] == 2
    with pytest.raises(me.RegularityError):
        me.regularity(me.LagrangeSystem(fx.trivial(), Y1), samples=5)


def test_poincare_cartan_so3_block():
    gla = fx.so3()
    sys = me.LagrangeSystem(gla, fx.kinetic_lagrangian(fx.identity_metric(3)))
    pc = me.poincare_cartan(gla, sys)
    pt = {"x[1]": 0.1, "y[1]": 0.4, "y[2]": -0.3, "y[3]": 0.8}
    yv = [0.4, -0.3, 0.8]
    for a in range(3):
        for b in range(3):
            expected = -sum(fx.levi_civita_symbol(a, b, c) * yv[c] for c in range(3))
            assert ex.evaluate(pc["omega"][(a, b)], pt) == pytest.approx(expected, abs=1e-12)
            assert ex.evaluate(pc["omega"][(a, 3 + b)], pt) == pytest.approx(-(a == b), abs=1e-12)
            assert ex.is_zero(pc["omega"][(3 + a, 3 + b)])


def test_sphere_semispray_matches_geodesic_oracle():
    gla, sys = _sys("sphere")
    G = me.canonical_semispray_lagrange(gla, sys)["G"]
    rng = np.random.default_rng(0)
    for _ in range(30):
        th, y1, y2 = rng.uniform(0.2, 2.9), rng.uniform(-1, 1), rng.uniform(-1, 1)
        pt = {"x[1]": th, "x[2]": 0.0, "y[1]": y1, "y[2]": y2}
        assert 2 * ex.evaluate(G[0], pt) == pytest.approx(-math.sin(th) * math.cos(th) * y2 ** 2, abs=1e-9)
        assert 2 * ex.evaluate(G[1], pt) == pytest.approx(2 / math.tan(th) * y1 * y2, abs=1e-9)


def test_so3_free_rigid_body_has_zero_spray():
    gla = fx.so3()
    sys = me.LagrangeSystem(gla, fx.kinetic_lagrangian(fx.identity_metric(3)))
    G = me.canonical_semispray_lagrange(gla, sys)["G"]
    env = sys.sample(20, rng_for(1))
    assert np.max(np.abs(eval_all(G, ex.Evaluator(env)))) < 1e-14


@pytest.mark.parametrize("name", ["flat", "sphere", "so3", "translated", "curved_h", "frame"])
def test_semispray_checks(name):
    gla, sys = _sys(name)
    rep = me.semispray_checks(gla, sys, samples=100, seed=2)
    assert rep.passed, rep.summary()


def test_spray_from_levi_civita_matches_canonical():
    gla, g = fx.metric_fixture("sphere")
    lc = cn.levi_civita_rho(gla, g)
    sys = me.LagrangeSystem(gla, fx.kinetic_lagrangian(g), connection=cn.canonical_connection(lc))
    a = me.canonical_semispray_lagrange(gla, sys)["semispray"]
    b = me.canonical_semispray_force(gla, sys)["semispray"]
    env = sys.sample(50, rng_for(3))
    ev = ex.Evaluator(env)
    assert np.max(np.abs(eval_all([x - y for x, y in zip(a, b)], ev))) <= 1e-9


def test_spray_is_homogeneous():
    # [C, S] - S = 0 for a spray
    gla, g = fx.metric_fixture("sphere")
    sys = me.LagrangeSystem(gla, fx.kinetic_lagrangian(g))
    S = me.canonical_semispray_lagrange(gla, sys)["semispray"]
    C = me.liouville(sys)
    B = gtb_bracket(gla, 2, GTBSection.split(C, 2), GTBSection.split(S, 2))
    ev = ex.Evaluator(sys.sample(50, rng_for(4)))
    assert np.max(np.abs(eval_all([x - y for x, y in zip(B.components, S)], ev))) <= 1e-9


def test_induced_connection_equals_canonical():
    gla, g = fx.metric_fixture("sphere")
    lc = cn.levi_civita_rho(gla, g)
    sys = me.LagrangeSystem(gla, fx.kinetic_lagrangian(g))
    Gam = me.canonical_semispray_lagrange(gla, sys)["Gamma"]
    ref = cn.canonical_connection(lc).Gamma
    ev = ex.Evaluator(sys.sample(50, rng_for(5)))
    res = eval_all([Gam[a][c] - ref[a][c] for a in range(2) for c in range(2)], ev)
    assert np.max(np.abs(res)) <= 1e-12


# -- dynamics ------------------------------------------------------------------------

def test_flat_free_particle_is_straight():
    gla, sys = _sys("flat")
    traj = me.integrate(me.el_rhs(gla, sys), [0, 0, 1, 0], 1e-3, 1000)
    assert np.max(np.abs(traj.final[:2] - [1.0, 0.0])) <= 1e-9
    assert traj.energy_drift() <= 1e-10


def test_flat_hamiltonian_straight_line():
    gla = fx.trivial()
    H = me.HamiltonSystem(gla, ex.parse("0.5*(p[1]^2 + p[2]^2)"))
    traj = me.integrate(me.hj_rhs(gla, H), [0, 0, 0.5, -1.0], 1e-3, 1000)
    assert np.allclose(traj.final, [0.5, -1.0, 0.5, -1.0], atol=1e-12)
    assert traj.energy_drift() <= 1e-10


def test_sphere_equator_and_great_circle():
    gla, sys = _sys("sphere")
    rhs = me.el_rhs(gla, sys)
    eq = me.integrate(rhs, [math.pi / 2, 0.0, 0.0, 1.0], 1e-3, 10_000)
    assert np.max(np.abs(eq.column("x[1]") - math.pi / 2)) <= 1e-6
    traj = me.integrate(rhs, [1.0, 0.0, 0.3, 0.5], 1e-3, 10_000)
    n = np.cross(_unit(1.0, 0.0), _tangent(1.0, 0.0, 0.3, 0.5))
    n /= np.linalg.norm(n)
    dev = max(abs(np.dot(n, _unit(th, ph))) for th, ph in traj.states[:, :2])
    assert dev <= 1e-6
    assert traj.energy_drift() <= 1e-6


def test_sphere_hamiltonian_great_circle():
    gla = fx.sphere_base()
    H = me.HamiltonSystem(gla, ex.parse("0.5*(p[1]^2 + p[2]^2/sin(x[1])^2)"))
    traj = me.integrate(me.hj_rhs(gla, H), [math.pi / 2, 0.0, 0.0, 1.0], 1e-3, 10_000)
    assert np.max(np.abs(traj.column("x[1]") - math.pi / 2)) <= 1e-6


def test_rk4_order_ratio():
    gla, sys = _sys("sphere")
    rhs = me.el_rhs(gla, sys)
    z0, T = [1.0, 0.0, 0.3, 0.5], 2.0
    ref = me.integrate(rhs, z0, T / 1600, 1600).final
    e1 = np.max(np.abs(me.integrate(rhs, z0, T / 50, 50).final - ref))
    e2 = np.max(np.abs(me.integrate(rhs, z0, T / 100, 100).final - ref))
    assert 12 <= e1 / e2 <= 20


def test_linear_drag_decay():
    gla = fx.trivial()
    sys = me.LagrangeSystem(gla, fx.kinetic_lagrangian(fx.identity_metric(2)), force=[-Y1, -Y2])
    traj = me.integrate(me.el_rhs(gla, sys), [0, 0, 1.0, 0.0], 1e-3, 1000)
    assert traj.final[2] == pytest.approx(math.exp(-0.5), abs=1e-4)


def test_trajectory_csv_and_json(tmp_path):
    gla, sys = _sys("flat")
    traj = me.integrate(me.el_rhs(gla, sys), [0, 0, 1, 0], 0.1, 5)
    path = tmp_path / "t.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,y1,y2,E"
    assert len(lines) == 7
    d = traj.to_dict()
    assert d["columns"] == lines[0].split(",") and len(d["rows"]) == 6


def test_integrate_rejects_non_finite():
    gla = fx.trivial(1)
    sys = me.LagrangeSystem(gla, ex.parse("0.5*y[1]^2"), force=[ex.parse("2*y[1]^3")])
    with pytest.raises(ex.NumericalError):
        me.integrate(me.el_rhs(gla, sys), [0.0, 10.0], 0.1, 200)


# -- parallel transport ----------------------------------------------------------------

def test_euclidean_transport_constant():
    gla, g = fx.metric_fixture("flat")
    lc = cn.levi_civita_rho(gla, g)
    t = ex.var("t")
    traj = me.parallel_transport(gla, lc, [ex.sin(t), t * t], [0.3, -0.7], 1e-2, 100)
    assert np.allclose(traj.final[:2], [0.3, -0.7], atol=1e-14)


@pytest.mark.parametrize("theta0", [0.6, 1.0, 1.3])
def test_latitude_holonomy(theta0):
    gla, g = fx.metric_fixture("sphere")
    lc = cn.levi_civita_rho(gla, g)
    t = ex.var("t")
    steps = 2000
    traj = me.parallel_transport(gla, lc, [ex.const(theta0), t], [1.0, 0.0], 2 * math.pi / steps, steps,
                                 metric=g)
    u1, u2 = traj.final[:2]
    # orthonormal frame (e_theta, sin(theta) e_phi)
    angle = math.atan2(math.sin(theta0) * u2, u1)
    expected = 2 * math.pi * (1 - math.cos(theta0))
    diff = (angle - expected + math.pi) % (2 * math.pi) - math.pi
    assert abs(diff) <= 1e-5
    assert traj.energy_drift() <= 1e-8


def test_transport_preserves_pairing_of_vector_and_covector():
    gla, g = fx.metric_fixture("sphere")
    lc = cn.levi_civita_rho(gla, g)
    t = ex.var("t")
    curve = [1.0 + 0.3 * ex.sin(t), t]
    u = me.parallel_transport(gla, lc, curve, [0.2, 0.9], 1e-3, 3000)
    w = me.parallel_transport(gla, lc, curve, [1.1, -0.4], 1e-3, 3000, valence=(0, 1))
    pair = np.sum(u.states[:, :2] * w.states[:, :2], axis=1)
    assert np.max(np.abs(pair - pair[0])) <= 1e-8
