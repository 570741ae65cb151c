import math

import numpy as np
import pytest

from gla import expr as ex
from gla import fixtures as fx
from gla import connection as cn
from gla import legendre as lg
from gla import mechanics as me
from gla.algebroid import GTBSection
from gla.report import eval_all, random_vector, rng_for


def _sphere_pair():
    gla, g = fx.metric_fixture("sphere")
    return gla, g, lg.legendre_pair(me.LagrangeSystem(gla, fx.kinetic_lagrangian(g)))


def _quartic_pair():
    gla = fx.trivial(2, {"x[1]": (-1, 1), "x[2]": (-1, 1), "y[1]": (-2, 2), "y[2]": (-2, 2),
                         "p[1]": (-3, 3), "p[2]": (-3, 3)})
    return gla, lg.legendre_pair(me.LagrangeSystem(gla, fx.quartic_lagrangian()))


def test_phi_L_examples():
    gla, g, pair = _sphere_pair()
    out = lg.phi_L(pair.lagrange, [math.pi / 3, 0.0, 1.0, 1.0])
    assert np.allclose(out, [math.pi / 3, 0.0, 1.0, 0.75])
    gla_q, pq = _quartic_pair()
    assert lg.phi_L(pq.lagrange, [0, 0, 1.0, 0.0])[2] == pytest.approx(2.0)
    flat = lg.legendre_pair(me.LagrangeSystem(fx.trivial(), fx.kinetic_lagrangian(fx.identity_metric(2))))
    batch = np.array([[0.1, 0.2, 0.3, 0.4], [0.0, 0.0, -1.0, 2.0]])
    assert np.allclose(lg.phi_L(flat.lagrange, batch), batch)


def test_phi_H_sphere():
    gla, g, pair = _sphere_pair()
    th = 1.1
    out = lg.phi_H(pair.hamilton, [th, 0.0, 0.5, -0.2])
    assert np.allclose(out[2:], [0.5, -0.2 / math.sin(th) ** 2], atol=1e-12)


def test_hamiltonian_closed_forms():
    gla, g, pair = _sphere_pair()
    Hc = ex.parse("0.5*(p[1]^2 + p[2]^2/sin(x[1])^2)")
    env = pair.hamilton.sample(100, rng_for(0))
    ev = ex.Evaluator(env)
    assert np.max(np.abs(ev.eval(pair.hamilton.H) - ev.eval(Hc))) <= 1e-10
    flat = lg.legendre_pair(me.LagrangeSystem(fx.trivial(), fx.kinetic_lagrangian(fx.identity_metric(2))))
    pt = {"x[1]": 0.0, "x[2]": 0.0, "p[1]": 0.6, "p[2]": -0.8}
    assert ex.evaluate(flat.hamilton.H, pt) == pytest.approx(0.5)


def test_quartic_newton_recovers_root():
    gla, pq = _quartic_pair()
    pt = {"x[1]": 0.0, "x[2]": 0.0, "p[1]": 2.0, "p[2]": 0.0}
    assert ex.evaluate(pq.hamilton.H, pt) == pytest.approx(1.25, abs=1e-12)
    assert ex.evaluate(pq.hamilton.K_a[0], pt) == pytest.approx(1.0, abs=1e-12)


def test_newton_failure_names_point():
    gla = fx.trivial(1)
    pair = lg.legendre_pair(me.LagrangeSystem(gla, ex.parse("y[1]^3/3")))
    with pytest.raises(ex.NewtonError) as info:
        ex.evaluate(pair.hamilton.H, {"x[1]": 0.0, "p[1]": -1.0})
    assert info.value.point["p[1]"] == -1.0


@pytest.mark.parametrize("which", ["flat", "sphere", "so3", "curved_h"])
def test_involution_quadratic(which):
    gla, g = fx.metric_fixture(which)
    pair = lg.legendre_pair(me.LagrangeSystem(gla, fx.kinetic_lagrangian(g)))
    rep = lg.involution_check(pair, samples=100, seed=1, tol=1e-10)
    assert rep.passed, rep.summary()
    assert rep.values["newton_coverage"] == 1.0
    # quadratic case: E_L = E_H o phi_L as well
    L, H = pair.lagrange, pair.hamilton
    res = ex.sub(L.energy(), pair.compose_phi_L(H.energy()))
    assert np.max(np.abs(ex.Evaluator(L.sample(50, rng_for(2))).eval(res))) <= 1e-10


def test_involution_quartic():
    gla, pq = _quartic_pair()
    rep = lg.involution_check(pq, samples=100, seed=3, tol=1e-9)
    assert rep.passed, rep.summary()
    assert rep.values["newton_coverage"] >= 0.99


def test_tangent_maps_compose_to_identity():
    gla, g, pair = _sphere_pair()
    names = pair.lagrange.coords
    rng = rng_for(4)
    ev = ex.Evaluator(pair.lagrange.sample(40, rng))
    for _ in range(5):
        sec = GTBSection.split(random_vector(names, 4, rng), 2)
        there = lg.tangent_phi(pair, sec, "L->H")
        back = lg.tangent_phi(pair, there, "H->L", chart="target")
        res = eval_all([a - b for a, b in zip(back.components, sec.components)], ev)
        assert np.max(np.abs(res)) <= 1e-9


def test_tangent_map_quadratic_vertical_is_identity():
    gla = fx.trivial()
    pair = lg.legendre_pair(me.LagrangeSystem(gla, fx.kinetic_lagrangian(fx.identity_metric(2))))
    out = lg.tangent_phi(pair, GTBSection((ex.ZERO, ex.ZERO), (ex.ONE, ex.ZERO)))
    assert [ex.evaluate(c, {}) for c in out.components] == [0.0, 0.0, 1.0, 0.0]


def test_duality_sphere_canonical():
    gla, g, pair = _sphere_pair()
    lc = cn.levi_civita_rho(gla, g)
    rep = lg.duality_checks(pair, cn.canonical_connection(lc), cn.canonical_connection(lc, dual=True),
                            samples=100, seed=5, tol=1e-8, hessian_tol=1e-9)
    assert rep.passed, rep.summary()


def test_duality_flat_zero():
    gla = fx.trivial()
    pair = lg.legendre_pair(me.LagrangeSystem(gla, fx.kinetic_lagrangian(fx.identity_metric(2))))
    z = cn.zero_connection(gla)
    zs = lg.dual_connection_from(pair, z)
    assert all(ex.is_zero(c) for row in zs.Gamma for c in row)
    rep = lg.duality_checks(pair, z, zs, samples=20)
    assert rep.passed and max(e.max_residual for e in rep.entries) == 0.0


def test_duality_quartic_hessians():
    gla, pq = _quartic_pair()
    z = cn.zero_connection(gla)
    rep = lg.duality_checks(pq, z, lg.dual_connection_from(pq, z), samples=100, seed=6)
    assert rep.passed, rep.summary()


def test_mismatched_connection_is_detected():
    gla, g, pair = _sphere_pair()
    lc = cn.levi_civita_rho(gla, g)
    rep = lg.duality_checks(pair, cn.canonical_connection(lc), cn.zero_connection(gla, dual=True), samples=30)
    assert not rep["connection_duality"].passed


@pytest.mark.parametrize("which", ["sphere", "curved_h"])
def test_el_hj_trajectories_match(which):
    gla, g = fx.metric_fixture(which)
    pair = lg.legendre_pair(me.LagrangeSystem(gla, fx.kinetic_lagrangian(g)))
    x0 = [1.0, 0.0] if which == "sphere" else [0.1, 0.2]
    out = lg.trajectory_match(pair, x0 + [0.3, 0.5], 1e-3, 1000)
    assert out["max_deviation"] <= 1e-6


def test_quartic_base_flow_uses_morphism():
    # non-quadratic L keeps the identity morphism, so the HJ base equation moves with p rather than y
    gla, pq = _quartic_pair()
    assert all(ex.is_zero(c - (1.0 if i == j else 0.0)) for i, row in enumerate(pq.hamilton.g)
               for j, c in enumerate(row))
    out = lg.trajectory_match(pq, [0.0, 0.0, 1.0, 0.5], 1e-3, 100)
    assert out["hj"].states[1, 0] == pytest.approx(2.0 * 1e-3, rel=1e-3)
