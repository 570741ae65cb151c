import numpy as np
import pytest

from gla import expr as ex
from gla import fixtures as fx
from gla.algebroid import (ConfigurationError, GeneralizedLieAlgebroid, GTBSection, bracket, fiber_names, gtb,
                           gtb_bracket, tm_h_algebroid, validate, warn_surjectivity)
from gla.report import eval_all, random_vector, rng_for, sample_env

AXIOM_FIXTURES = ["so3", "trivial", "translated", "curved_h", "frame", "sphere"]


@pytest.mark.parametrize("name", AXIOM_FIXTURES)
def test_axioms_hold(name):
    rep = validate(fx.ALL_GLA[name](), samples=200, seed=1, tol=1e-9)
    assert rep.passed, rep.summary()


def test_shifted_so3_is_a_generalized_algebroid():
    rep = validate(fx.so3(h_shift=0.25), samples=100, seed=2)
    assert rep.passed, rep.summary()


def test_corrupted_structure_is_caught():
    rep = validate(fx.corrupted(), samples=50)
    assert not rep["antisymmetry"].passed
    assert not rep.passed


def test_so3_basis_brackets():
    la = fx.so3()
    e = [[ex.ONE if i == k else ex.ZERO for i in range(3)] for k in range(3)]
    b12 = bracket(la, e[0], e[1])
    assert [ex.evaluate(c, {"x[1]": 0.0}) for c in b12] == [0.0, 0.0, 1.0]
    b31 = bracket(la, e[2], e[0])
    assert [ex.evaluate(c, {"x[1]": 0.0}) for c in b31] == [0.0, 1.0, 0.0]


def test_curved_h_anchor_on_N_matches_fd_jacobian():
    # g = id, so theta^k_alpha = d h^k / d x^alpha; h(x) = (x1, x2 + x1^2)
    gla = fx.curved_h()
    th = gla.theta()
    pt = {"x[1]": 0.3, "x[2]": -0.4}

    def h(x1, x2):
        return np.array([x1, x2 + x1 ** 2])

    eps = 1e-6
    for a in range(2):
        d = np.zeros(2)
        d[a] = eps
        fd = (h(0.3 + d[0], -0.4 + d[1]) - h(0.3 - d[0], -0.4 - d[1])) / (2 * eps)
        got = [ex.evaluate(th[a][k], pt) for k in range(2)]
        assert np.allclose(got, fd, atol=1e-8)


def test_leibniz_rule_explicit():
    gla = fx.frame()
    A = gla.on_N
    rng = rng_for(4)
    names = gla.n_names
    u, v = random_vector(names, 2, rng), random_vector(names, 2, rng)
    f = ex.parse("sin(x[1]) + x[2]^2")
    lhs = A.bracket(u, [f * c for c in v])
    base = A.bracket(u, v)
    rho_f = A.act_vec(u, f)
    rhs = [f * b + rho_f * c for b, c in zip(base, v)]
    ev = ex.Evaluator(sample_env(gla.domain_box, names, 50, rng))
    assert np.max(np.abs(eval_all([a - b for a, b in zip(lhs, rhs)], ev))) < 1e-12


def test_tm_h_rejects_bad_inverse():
    X1, X2 = ex.var("x[1]"), ex.var("x[2]")
    with pytest.raises(ConfigurationError):
        tm_h_algebroid([X1, X2], [X1 + 1, X2], [X1, X2])


def test_surjectivity_warning():
    assert warn_surjectivity(fx.curved_h())
    X1 = ex.var("x[1]")
    degenerate = GeneralizedLieAlgebroid(1, 1, 3, [[ex.ZERO]] * 3, {}, [X1 * 0.0], [X1], {"x[1]": (-1, 1)}, "deg")
    with pytest.warns(UserWarning):
        assert not warn_surjectivity(degenerate)


@pytest.mark.parametrize("name", ["so3", "trivial", "translated", "curved_h"])
def test_gtb_jacobi_random_triples(name):
    gla = fx.ALL_GLA[name]()
    r = gla.p
    T = gtb(gla, r)
    rng = rng_for(7)
    names = T.coords
    ev = ex.Evaluator(sample_env(gla.domain_box, names, 100, rng))
    worst = 0.0
    for _ in range(50):
        u, v, w = (random_vector(names, T.rank, rng, degree=1) for _ in range(3))
        res = eval_all(T.jacobi(u, v, w), ev)
        worst = max(worst, float(np.max(np.abs(res))))
    assert worst <= 1e-8


def test_gtb_bracket_vertical_block():
    # [Y d/dy, Y' d/dy] is the plain vector-field bracket in the fibre
    gla = fx.trivial()
    y1, y2 = ex.var("y[1]"), ex.var("y[2]")
    U = GTBSection((ex.ZERO, ex.ZERO), (y2, ex.ZERO))
    V = GTBSection((ex.ZERO, ex.ZERO), (ex.ZERO, y1))
    B = gtb_bracket(gla, 2, U, V)
    pt = {"x[1]": 0.1, "x[2]": 0.2, "y[1]": 0.7, "y[2]": -0.3}
    assert [ex.evaluate(c, pt) for c in B.components] == pytest.approx([0, 0, -0.7, -0.3])


def test_gtb_cached_and_shape_checks():
    gla = fx.so3()
    assert gtb(gla, 3) is gtb(gla, 3)
    assert gtb(gla, 3, dual=True).coords[-3:] == fiber_names(3, True)
    with pytest.raises(ConfigurationError):
        gtb_bracket(gla, 3, GTBSection((ex.ZERO,), ()), GTBSection((ex.ZERO,), ()))
