import math

import numpy as np
import pytest

from gla import expr as ex
from gla import fixtures as fx
from gla import connection as cn
from gla.algebroid import ConfigurationError
from gla.report import eval_all, rng_for, sample_env

METRIC_NAMES = list(fx.METRICS)


def _lc(name):
    gla, g = fx.metric_fixture(name)
    return gla, cn.levi_civita_rho(gla, g)


def _at(e, pt):
    return ex.evaluate(e, pt)


# -- Levi-Civita-type connection ------------------------------------------------------

def test_sphere_christoffels_closed_form():
    gla, lc = _lc("sphere")
    G = lc.Gamma
    rng = np.random.default_rng(0)
    for th in rng.uniform(0.2, 2.9, 100):
        pt = {"x[1]": th, "x[2]": 0.3}
        assert _at(G[0][1][1], pt) == pytest.approx(-math.sin(th) * math.cos(th), abs=1e-10)
        assert _at(G[1][0][1], pt) == pytest.approx(1 / math.tan(th), abs=1e-10)
        assert _at(G[1][1][0], pt) == pytest.approx(1 / math.tan(th), abs=1e-10)
        assert _at(G[0][0][0], pt) == 0.0


def test_polar_christoffels_and_flatness():
    gla, lc = _lc("polar")
    pt = {"x[1]": 1.3, "x[2]": 0.1}
    assert _at(lc.Gamma[0][1][1], pt) == pytest.approx(-1.3)
    assert _at(lc.Gamma[1][0][1], pt) == pytest.approx(1 / 1.3)
    R = lc.curvature()
    assert all(abs(_at(c, pt)) < 1e-14 for c in cn._flatten(R))


def test_euclidean_is_trivial():
    gla, lc = _lc("flat")
    assert all(ex.is_zero(c) for c in cn._flatten(lc.Gamma))
    assert all(ex.is_zero(c) for c in cn._flatten(lc.curvature()))


def test_so3_christoffels_and_scalar_curvature():
    # bi-invariant metric: Gamma^a_bc = -1/2 L^a_bc, sectional curvature 1/4, scalar curvature 3/2
    gla, lc = _lc("so3")
    pt = {"x[1]": 0.0}
    for a in range(3):
        for b in range(3):
            for c in range(3):
                assert _at(lc.Gamma[a][b][c], pt) == pytest.approx(-0.5 * fx.levi_civita_symbol(b, c, a))
    assert _at(cn.scalar_curvature_linear(lc, lc.metric_inverse), pt) == pytest.approx(1.5)


@pytest.mark.parametrize("name", ["sphere", "polar"])
def test_scalar_curvature_oracle(name):
    gla, lc = _lc(name)
    env = sample_env(gla.domain_box, gla.base_names, 100, rng_for(1))
    vals = ex.Evaluator(env).eval(cn.scalar_curvature_linear(lc, lc.metric_inverse))
    expected = {"sphere": 2.0, "polar": 0.0}[name]
    assert np.max(np.abs(vals - expected)) <= 1e-8


@pytest.mark.parametrize("name", METRIC_NAMES)
def test_linear_suite(name):
    gla, lc = _lc(name)
    rep = cn.linear_suite(gla, lc, samples=100, seed=2, tol=1e-8)
    assert rep.passed, rep.summary()
    env = sample_env(gla.domain_box, gla.base_names, 50, rng_for(3))
    ev = ex.Evaluator(env)
    assert np.max(np.abs(eval_all(cn.metric_compatibility(lc, lc.metric), ev))) <= 1e-10
    assert np.max(np.abs(eval_all(cn._flatten(cn.rho_torsion(gla, lc)), ev))) <= 1e-10


def test_torsion_of_generic_connection_against_definition():
    # T(e_i, e_j) = D_ei e_j - D_ej e_i - [e_i, e_j] for a hand-made connection on so(3)
    gla = fx.so3()
    A = gla.on_M
    X1 = ex.var("x[1]")
    Gam = [[[X1 * (a + 2 * b + 3 * c) for c in range(3)] for b in range(3)] for a in range(3)]
    conn = cn.LinearConnection(A, Gam)
    T = conn.torsion()
    pt = {"x[1]": 0.7}
    for k in range(3):
        for i in range(3):
            for j in range(3):
                expected = 0.7 * ((k + 2 * j + 3 * i) - (k + 2 * i + 3 * j)) - fx.levi_civita_symbol(i, j, k)
                assert _at(T[k][i][j], pt) == pytest.approx(expected)


def test_asymmetric_metric_rejected():
    gla = fx.trivial()
    with pytest.raises(ConfigurationError, match="metric not symmetric"):
        cn.levi_civita_rho(gla, [[ex.ONE, ex.var("x[1]")], [ex.ZERO, ex.ONE]])


# -- nonlinear connections, endomorphisms ------------------------------------------------

@pytest.mark.parametrize("name", METRIC_NAMES)
def test_nonlinear_and_endomorphism_suites(name):
    gla, lc = _lc(name)
    conn = cn.canonical_connection(lc)
    rep = cn.nonlinear_suite(gla, conn, samples=60, seed=4)
    assert rep.passed, rep.summary()
    rep = cn.endomorphism_suite(gla, conn, samples=100, seed=5, tol=1e-12, g=lc.metric, ginv=lc.metric_inverse)
    assert rep.passed, rep.summary()


def test_dual_canonical_connection_suite():
    gla, lc = _lc("sphere")
    rep = cn.nonlinear_suite(gla, cn.canonical_connection(lc, dual=True), samples=50, seed=6)
    assert rep.passed, rep.summary()


def test_flat_polar_zero_torsion_tension_deflection():
    for name in ("flat", "polar"):
        gla, lc = _lc(name)
        out = cn.connection_torsion_deflection(gla, cn.canonical_connection(lc))
        env = sample_env(gla.domain_box, gla.base_names + ("y[1]", "y[2]"), 30, rng_for(7))
        ev = ex.Evaluator(env)
        for key in ("torsion", "tension", "deflection"):
            assert np.max(np.abs(eval_all(cn._flatten(out[key]), ev))) < 1e-13


def test_zero_deflection_so3():
    la, conn = fx.zero_deflection_so3()
    out = cn.connection_torsion_deflection(la, conn)
    env = sample_env({}, ("x[1]", "y[1]", "y[2]", "y[3]"), 30, rng_for(8))
    ev = ex.Evaluator(env)
    for key in ("torsion", "tension", "deflection"):
        assert np.max(np.abs(eval_all(cn._flatten(out[key]), ev))) < 1e-14
    R = cn.nonlinear_curvature(la, conn)
    assert np.max(np.abs(eval_all(cn._flatten(R), ev))) > 0.1


def test_levi_civita_so3_has_torsion_two():
    gla, lc = _lc("so3")
    out = cn.connection_torsion_deflection(gla, cn.canonical_connection(lc))
    # T^a_bc = dGamma^a_c/dy^b - dGamma^a_b/dy^c - L^a_bc with Gamma^a_c = -1/2 L^a_bc y^b gives -2 L^a_bc
    pt = {"x[1]": 0.0, "y[1]": 0.2, "y[2]": 0.1, "y[3]": -0.5}
    assert _at(out["torsion"][2][0][1], pt) == pytest.approx(-2.0)


def test_sphere_nijenhuis_nonzero():
    gla, lc = _lc("sphere")
    NF = cn.nijenhuis_F_basis(gla, cn.canonical_connection(lc), lc.metric, lc.metric_inverse)
    env = sample_env(gla.domain_box, ("x[1]", "x[2]", "y[1]", "y[2]"), 30, rng_for(9))
    assert np.max(np.abs(eval_all(NF, ex.Evaluator(env)))) > 0.1


# -- distinguished connections -------------------------------------------------------------

@pytest.mark.parametrize("name", METRIC_NAMES)
@pytest.mark.parametrize("normal", [False, True])
def test_metric_and_identity_suites(name, normal):
    gla, lc = _lc(name)
    conn = cn.canonical_connection(lc)
    G = cn.MetricStructure(lc.metric, lc.metric)
    dc = cn.metric_d_connection(gla, conn, G, normal=normal)
    if not normal:
        rep = cn.metric_suite(gla, conn, dc, G, samples=60, seed=10, tol=1e-9)
        assert rep.passed, rep.summary()
    rep = cn.identity_suite_d(gla, conn, dc, samples=60, seed=11, tol=1e-8)
    assert rep.passed, rep.summary()


def test_berwald_identities_on_nonlinear_connection():
    la, conn = fx.zero_deflection_so3()
    rep = cn.identity_suite_d(la, conn, cn.berwald(la, conn), samples=40, seed=12)
    assert rep.passed, rep.summary()


def test_vertical_block_matches_fd_christoffel():
    # fibre-dependent g_v on so(3); Vv^a_bc = 1/2 g^ad (d_b g_dc + d_c g_db - d_d g_bc) by finite differences
    la = fx.so3()
    conn = cn.zero_connection(la)
    gv_txt = [["1 + y[1]^2", "0.2*y[3]", "0"], ["0.2*y[3]", "2 + sin(y[2])", "0"], ["0", "0", "1 + y[1]*y[2]/4"]]
    gv = [[ex.parse(t) for t in row] for row in gv_txt]
    G = cn.MetricStructure(fx.identity_metric(3), gv)
    dc = cn.metric_d_connection(la, conn, G)
    y0 = np.array([0.3, -0.4, 0.6])

    def gnum(y):
        env = {"x[1]": 0.0, "y[1]": y[0], "y[2]": y[1], "y[3]": y[2]}
        return np.array([[ex.evaluate(c, env) for c in row] for row in gv])

    h = 1e-6
    dg = np.zeros((3, 3, 3))  # dg[k] = d g / d y^k
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        dg[k] = (gnum(y0 + e) - gnum(y0 - e)) / (2 * h)
    gi = np.linalg.inv(gnum(y0))
    pt = {"x[1]": 0.0, "y[1]": y0[0], "y[2]": y0[1], "y[3]": y0[2]}
    for a in range(3):
        for b in range(3):
            for c in range(3):
                fd = 0.5 * sum(gi[a, d] * (dg[b][d, c] + dg[c][d, b] - dg[d][b, c]) for d in range(3))
                assert _at(dc.Vv[a][b][c], pt) == pytest.approx(fd, abs=1e-8)


@pytest.mark.parametrize("name", ["sphere", "so3", "curved_h"])
def test_einstein_definitional_residual(name):
    gla, lc = _lc(name)
    conn = cn.canonical_connection(lc)
    G = cn.MetricStructure(lc.metric, lc.metric)
    dc = cn.metric_d_connection(gla, conn, G)
    out = cn.ricci_einstein(gla, conn, dc, G, kappa=2.5)
    env = conn.sample(50, rng_for(13))
    res = eval_all(out["einstein_residual"], ex.Evaluator(env))
    assert np.max(np.abs(res)) <= 1e-12


def test_ricci_einstein_rejects_zero_kappa():
    gla, lc = _lc("flat")
    conn = cn.canonical_connection(lc)
    G = cn.MetricStructure(lc.metric, lc.metric)
    with pytest.raises(ConfigurationError):
        cn.ricci_einstein(gla, conn, cn.metric_d_connection(gla, conn, G), G, kappa=0.0)


def test_ricci_type_identity_with_torsion():
    # a connection with torsion still satisfies the Ricci identity once the torsion term is kept
    gla = fx.so3()
    X1 = ex.var("x[1]")
    Gam = [[[ex.sin(X1 * (a + 1)) + 0.1 * (b - c) for c in range(3)] for b in range(3)] for a in range(3)]
    conn = cn.LinearConnection(gla.on_M, Gam)
    rep = cn.ricci_type_residual(gla, conn, samples=30, seed=14)
    assert rep.passed, rep.summary()
    env = sample_env(gla.domain_box, gla.base_names, 10, rng_for(15))
    assert np.max(np.abs(eval_all(cn._flatten(conn.torsion()), ex.Evaluator(env)))) > 0.1
