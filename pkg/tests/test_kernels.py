import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genbary import _mlp
from genbary.exceptions import InvalidInputError
from genbary.kernels import (RBF, FeatureMap, RationalQuadraticMixture, SmmdConfig, gram,
                             kernel_eval, mmd2, mmd2_grad_points, rational_quadratic,
                             rq_mixture, smmd_critic_objective)
from genbary.measures import DiscreteMeasure, SeededRng, mixture
from genbary.oracles import finite_difference_grad

KERNELS = [RBF(0.7), RBF(np.sqrt(2.0)), rational_quadratic(2.0), rq_mixture()]


def naive_mmd2(k, X, a, Y, b):
    # double loops over kernel_eval, independent of the vectorized path
    def s(P, p, Q, q):
        return sum(p[i] * q[j] * kernel_eval(k, P[i], Q[j])
                   for i in range(len(P)) for j in range(len(Q)))
    return s(X, a, X, a) + s(Y, b, Y, b) - 2 * s(X, a, Y, b)


def test_kernel_diagonal():
    for k in KERNELS:
        assert kernel_eval(k, [0.3, -1.0], [0.3, -1.0]) == pytest.approx(k.diagonal)
    assert rq_mixture().diagonal == 5.0


def test_rbf_scalar_value():
    assert kernel_eval(RBF(np.sqrt(2.0)), [0.0, 0.0], [2.0, 0.0]) == pytest.approx(np.exp(-1.0))


def test_rq_scalar_value():
    k = RationalQuadraticMixture(((1.0, 1.0),))
    assert kernel_eval(k, [0.0], [2.0]) == pytest.approx(1.0 / 3.0)


def test_kernel_symmetry_and_dimension_check():
    k = rq_mixture()
    assert kernel_eval(k, [1.0, 2.0], [0.0, -1.0]) == kernel_eval(k, [0.0, -1.0], [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        kernel_eval(k, [1.0, 2.0], [1.0])
    with pytest.raises(InvalidInputError):
        gram(k, np.zeros((2, 2)), np.zeros((2, 3)))


@pytest.mark.parametrize("bad", [lambda: RBF(0.0), lambda: RationalQuadraticMixture(()),
                                 lambda: RationalQuadraticMixture(((-1.0, 1.0),))])
def test_kernel_spec_validation(bad):
    with pytest.raises(InvalidInputError):
        bad()


def test_mmd2_singletons_closed_form():
    k = RBF(np.sqrt(2.0))
    v = mmd2(k, DiscreteMeasure([[0.0, 0.0]]), DiscreteMeasure([[2.0, 0.0]]))
    assert v == pytest.approx(2.0 - 2.0 * np.exp(-1.0))
    assert v == pytest.approx(1.264241, abs=1e-6)


def test_mmd2_identical_measures_is_zero():
    mu = DiscreteMeasure(SeededRng(0).generator.standard_normal((10, 3)))
    for k in KERNELS:
        assert abs(mmd2(k, mu, mu)) <= 1e-12


def test_mmd2_matches_double_loop_oracle():
    g = SeededRng(1).generator
    X, Y = g.standard_normal((5, 2)), g.standard_normal((4, 2)) + 1.0
    a = g.dirichlet(np.ones(5))
    b = g.dirichlet(np.ones(4))
    for k in KERNELS:
        fast = mmd2(k, DiscreteMeasure(X, a), DiscreteMeasure(Y, b))
        assert fast == pytest.approx(naive_mmd2(k, X, a, Y, b), abs=1e-12)


def test_mmd2_gradient_vanishes_at_equal_measures():
    mu = DiscreteMeasure(SeededRng(2).generator.standard_normal((7, 2)))
    for k in KERNELS:
        assert np.abs(mmd2_grad_points(k, mu, mu)).max() <= 1e-10


def test_mmd2_gradient_singleton_closed_form():
    ell = 0.8
    k = RBF(ell)
    x, y = np.array([0.3, -0.2]), np.array([1.0, 0.5])
    grad = mmd2_grad_points(k, DiscreteMeasure([x]), DiscreteMeasure([y]))
    kv = kernel_eval(k, x, y)
    assert np.allclose(grad[0], (2.0 / ell ** 2) * kv * (x - y), atol=1e-14)


@pytest.mark.parametrize("k", KERNELS)
def test_mmd2_gradient_finite_differences(k):
    g = SeededRng(3).generator
    X, Y = g.standard_normal((6, 2)), g.standard_normal((6, 2)) + 0.5
    a = g.dirichlet(np.ones(6))
    mu_y = DiscreteMeasure(Y)
    analytic = mmd2_grad_points(k, DiscreteMeasure(X, a), mu_y)
    fd = finite_difference_grad(lambda v: mmd2(k, DiscreteMeasure(v.reshape(6, 2), a), mu_y),
                                X.ravel(), h=1e-5).reshape(6, 2)
    assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) <= 1e-6


def test_mean_embedding_linearity():
    g = SeededRng(4).generator
    mu = DiscreteMeasure(g.standard_normal((4, 2)), g.dirichlet(np.ones(4)))
    nu = DiscreteMeasure(g.standard_normal((3, 2)), g.dirichlet(np.ones(3)))
    probe = g.standard_normal((6, 2))
    k = rq_mixture()
    t = 0.3
    mix = mixture([mu, nu], [t, 1 - t])
    lhs = mix.weights @ gram(k, mix.points, probe)
    rhs = t * (mu.weights @ gram(k, mu.points, probe)) + (1 - t) * (nu.weights @ gram(k, nu.points, probe))
    assert np.allclose(lhs, rhs, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_mmd2_nonnegative_and_symmetric(n, m, d, seed):
    g = SeededRng(seed).generator
    mu = DiscreteMeasure(g.standard_normal((n, d)), g.dirichlet(np.ones(n)))
    nu = DiscreteMeasure(2 * g.standard_normal((m, d)), g.dirichlet(np.ones(m)))
    for k in (RBF(1.0), rq_mixture()):
        v = mmd2(k, mu, nu)
        assert v >= -1e-12
        assert abs(v - mmd2(k, nu, mu)) <= 1e-12


# -- feature maps and the critic objective -----------------------------------

def test_identity_feature_map_is_exact():
    X = SeededRng(5).generator.standard_normal((20, 3))
    assert np.array_equal(FeatureMap.identity(3)(X), X)


def test_feature_map_param_round_trip():
    psi = FeatureMap((2, 8, 4), rng=SeededRng(0))
    X = SeededRng(1).generator.standard_normal((5, 2))
    before = psi(X)
    psi.set_params(psi.get_params())
    assert np.array_equal(psi(X), before)
    with pytest.raises(InvalidInputError):
        psi.set_params(np.zeros(3))
    with pytest.raises(InvalidInputError):
        psi.set_params(np.full(psi.get_params().size, np.inf))


def test_critic_objective_without_penalty_reduces_to_mmd2():
    g = SeededRng(6).generator
    mu, nu = DiscreteMeasure(g.standard_normal((8, 2))), DiscreteMeasure(g.standard_normal((8, 2)))
    cfg = SmmdConfig(kernel=rq_mixture(), gp_coef=0.0)
    assert smmd_critic_objective(cfg, FeatureMap.identity(2), mu, nu) == pytest.approx(
        mmd2(rq_mixture(), mu, nu), abs=1e-14)


def test_critic_objective_on_equal_measures_is_minus_penalty():
    mu = DiscreteMeasure(SeededRng(7).generator.standard_normal((8, 2)))
    psi = FeatureMap((2, 6, 3), rng=SeededRng(1))
    cfg = SmmdConfig(gp_coef=2.0)
    penalty, _ = _mlp.jacobian_penalty(psi.params, mu.points)
    obj = smmd_critic_objective(cfg, psi, mu, mu)
    assert obj <= 0.0
    assert obj == pytest.approx(-2.0 * penalty, abs=1e-12)


def test_identity_features_have_zero_penalty_in_unit_frobenius_convention():
    # identity in d=1 has Jacobian norm exactly 1
    mu = DiscreteMeasure(SeededRng(8).generator.standard_normal((5, 1)))
    penalty, _ = _mlp.jacobian_penalty(FeatureMap.identity(1).params, mu.points)
    assert penalty == pytest.approx(0.0, abs=1e-15)


def test_critic_objective_invariant_to_joint_permutation():
    g = SeededRng(9).generator
    X, Y = g.standard_normal((10, 2)), g.standard_normal((10, 2)) + 0.3
    perm = g.permutation(10)
    psi = FeatureMap((2, 8, 4), rng=SeededRng(2))
    cfg = SmmdConfig()
    a = smmd_critic_objective(cfg, psi, DiscreteMeasure(X), DiscreteMeasure(Y))
    b = smmd_critic_objective(cfg, psi, DiscreteMeasure(X[perm]), DiscreteMeasure(Y[perm]))
    assert a == pytest.approx(b, abs=1e-12)


def test_critic_gradient_finite_differences():
    g = SeededRng(10).generator
    mu, nu = DiscreteMeasure(g.standard_normal((6, 2))), DiscreteMeasure(g.standard_normal((6, 2)) + 0.5)
    psi = FeatureMap((2, 5, 3), rng=SeededRng(3))
    cfg = SmmdConfig(gp_coef=0.7)
    t = g.uniform(size=6)
    X_int = t[:, None] * mu.points + (1 - t[:, None]) * nu.points
    margin = min(_mlp.min_preactivation_margin(psi.params, P) for P in (mu.points, nu.points, X_int))
    assert margin > 1e-3
    _, grad = smmd_critic_objective(cfg, psi, mu, nu, t=t, return_grad=True)
    theta = psi.get_params()

    def objective(v):
        q = psi.copy()
        q.set_params(v)
        return smmd_critic_objective(cfg, q, mu, nu, t=t)

    fd = finite_difference_grad(objective, theta, h=1e-6)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) <= 1e-5
