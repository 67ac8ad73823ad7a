import numpy as np
import pytest

from genbary.entropic_ot import SinkhornConfig, sw_split_value_and_grad
from genbary.exceptions import InvalidInputError, NumericalError, RunFailedError
from genbary.generators import AffineGaussian, Mlp
from genbary.kernels import RBF, FeatureMap, SmmdConfig, rq_mixture
from genbary.measures import DiscreteMeasure, GaussianSpec, SeededRng, sample_gaussian, subsample
from genbary.solver import (MMD, SMMD, BarycenterProblem, Diagnostics, EntropicOT, OptimizerSpec,
                            SinkhornDivergence, StepRecord, adversarial_fit, barycentric_gradient,
                            barycentric_step, curvature_proxy, ema, fit, full_batch_gradient,
                            full_batch_loss, gradient_quality, read_trace, stationarity_lr,
                            stationarity_report, write_trace)


def two_gaussians(n=200, seed=0):
    rng = SeededRng(seed)
    return [sample_gaussian(GaussianSpec([0.0, 0.0], 0.1 * np.eye(2)), n, rng),
            sample_gaussian(GaussianSpec([1.0, 1.0], 0.2 * np.eye(2)), n, rng)]


class Exploding:
    """Discrepancy whose gradient is always non-finite."""

    def value_and_grad(self, x, y, critic=None):
        raise NumericalError("boom")

    def value(self, x, y, critic=None):
        return 0.0


# -- problem and optimizer specs ----------------------------------------------

def test_problem_validation():
    ms = two_gaussians()
    with pytest.raises(InvalidInputError):
        BarycenterProblem([])
    with pytest.raises(InvalidInputError):
        BarycenterProblem(ms, [0.5, 0.6])
    with pytest.raises(InvalidInputError):
        BarycenterProblem(ms + [DiscreteMeasure(np.zeros((3, 3)))])
    with pytest.raises(InvalidInputError):
        BarycenterProblem(ms, None, [MMD()])
    prob = BarycenterProblem(ms)
    assert np.allclose(prob.beta, 0.5) and prob.dim == 2
    assert isinstance(prob.discrepancies[0], SinkhornDivergence)


@pytest.mark.parametrize("kwargs", [dict(kind="rmsprop"), dict(lr=-1.0), dict(decay=0.0),
                                    dict(decay=1.5), dict(batch_size=0), dict(n_iter=0),
                                    dict(decay_every=0)])
def test_optimizer_spec_validation(kwargs):
    with pytest.raises(InvalidInputError):
        OptimizerSpec(**kwargs)


def test_learning_rate_schedule():
    spec = OptimizerSpec(lr=0.1, decay=0.5, decay_every=10)
    assert spec.lr_at(0) == 0.1 and spec.lr_at(9) == 0.1 and spec.lr_at(10) == 0.05
    assert spec.lr_at(25) == pytest.approx(0.025)


def test_first_adam_step_is_sign_like():
    state = OptimizerSpec("adam", lr=0.1).make_state(3)
    grad = np.array([2.0, -0.5, 1e-3])
    new = state.update(np.zeros(3), grad)
    assert np.allclose(new, -0.1 * np.sign(grad), rtol=1e-4)
    sgd = OptimizerSpec("sgd", lr=0.1).make_state(3)
    assert np.array_equal(sgd.update(np.ones(3), grad), 1.0 - 0.1 * grad)


# -- one step --------------------------------------------------------------

def test_gradient_is_weighted_sum_of_terms():
    ms = two_gaussians()
    prob = BarycenterProblem(ms, [0.3, 0.7], [MMD(RBF(1.0)), SinkhornDivergence(SinkhornConfig(0.1))])
    gen = AffineGaussian(2)
    total, losses, grads = barycentric_gradient(prob, gen, OptimizerSpec(batch_size=40), SeededRng(1))
    assembled = np.zeros(gen.n_params)
    for b, g_p in zip(prob.beta, grads):
        assembled += b * g_p
    assert np.array_equal(total, assembled)
    assert np.all(losses > 0)


def test_zero_weight_term_contributes_nothing():
    ms = two_gaussians()
    opt = OptimizerSpec(batch_size=30)
    gen = AffineGaussian(2)
    both = BarycenterProblem(ms, [1.0, 0.0], MMD())
    single = BarycenterProblem(ms[:1], [1.0], MMD())
    total, losses, grads = barycentric_gradient(both, gen, opt, SeededRng(2))
    ref, _, _ = barycentric_gradient(single, gen, opt, SeededRng(2))
    assert grads[1] is None and losses[1] == 0.0
    assert np.array_equal(total, ref)


def test_independent_batches_chain_both_generator_draws():
    ms = two_gaussians()
    cfg = SinkhornConfig(0.1, tol=1e-3, anneal=0.5)
    prob = BarycenterProblem(ms[:1], None, SinkhornDivergence(cfg, independent_batches=True))
    gen = AffineGaussian(2)
    gen.set_params(np.array([0.2, -0.1, 1.1, 0.1, -0.2, 0.9]))
    opt = OptimizerSpec(batch_size=25)
    total, losses, _ = barycentric_gradient(prob, gen, opt, SeededRng(3))
    rng = SeededRng(3)
    y = subsample(ms[0], 25, rng)
    x, tape = gen.forward(25, rng)
    y2 = subsample(ms[0], 25, rng)
    x2, tape2 = gen.forward(25, rng)
    v, gx, gx2 = sw_split_value_and_grad(x, x2, y, y2, cfg)
    assert losses[0] == v
    assert np.allclose(total, gen.backward(tape, gx) + gen.backward(tape2, gx2), rtol=0, atol=1e-14)


def test_zero_learning_rate_leaves_parameters_unchanged():
    prob = BarycenterProblem(two_gaussians(), None, MMD())
    for kind in ("sgd", "adam"):
        gen = AffineGaussian(2, [0.3, -0.2], [[1.0, 0.2], [0.0, 0.7]])
        before = gen.get_params()
        fit(prob, gen, OptimizerSpec(kind, lr=0.0, batch_size=20, n_iter=5), SeededRng(0))
        assert np.array_equal(gen.get_params(), before)


def test_dimension_mismatch_is_rejected():
    prob = BarycenterProblem(two_gaussians(), None, MMD())
    with pytest.raises(InvalidInputError):
        barycentric_gradient(prob, AffineGaussian(3), OptimizerSpec(batch_size=5), SeededRng(0))


def test_non_finite_gradient_aborts_step_and_run():
    prob = BarycenterProblem(two_gaussians(), None, Exploding())
    gen = AffineGaussian(2)
    before = gen.get_params()
    state = OptimizerSpec(batch_size=5).make_state(gen.n_params)
    rec = barycentric_step(prob, gen, state, SeededRng(0))
    assert rec.aborted and np.isnan(rec.loss) and "boom" in rec.reason
    assert np.array_equal(gen.get_params(), before)
    with pytest.raises(RunFailedError) as exc:
        fit(prob, gen, OptimizerSpec(batch_size=5, n_iter=4), SeededRng(0))
    assert exc.value.diagnostics.aborted_fraction == 1.0


def test_unconverged_sinkhorn_aborts_step():
    prob = BarycenterProblem(two_gaussians(), None, SinkhornDivergence(SinkhornConfig(0.001, max_iter=1)))
    state = OptimizerSpec(batch_size=20).make_state(6)
    assert barycentric_step(prob, AffineGaussian(2), state, SeededRng(0)).aborted


# -- fitting ---------------------------------------------------------------

def test_fit_recovers_gaussian_target_with_mmd():
    target = sample_gaussian(GaussianSpec([1.0, 2.0], np.eye(2)), 2000, SeededRng(0))
    prob = BarycenterProblem([target], [1.0], MMD(rq_mixture()))
    gen, diag = fit(prob, AffineGaussian(2), OptimizerSpec("adam", lr=0.02, batch_size=100, n_iter=2000),
                    SeededRng(1))
    assert np.linalg.norm(gen.mean - [1.0, 2.0]) <= 0.1
    assert diag.n_iter == 2000 and diag.aborted_fraction == 0.0


def test_degenerate_weights_match_single_measure_fit():
    ms = two_gaussians()
    opt = OptimizerSpec("adam", lr=0.05, batch_size=32, n_iter=60)
    disc = SinkhornDivergence(SinkhornConfig(0.1, tol=1e-3))
    _, d2 = fit(BarycenterProblem(ms, [1.0, 0.0], disc), AffineGaussian(2), opt, SeededRng(3))
    _, d1 = fit(BarycenterProblem(ms[:1], [1.0], disc), AffineGaussian(2), opt, SeededRng(3))
    final2, final1 = d2.smoothed_loss[-1], d1.smoothed_loss[-1]
    assert abs(final2 - final1) <= 0.05 * abs(final1)


def test_fit_is_deterministic_and_reports_callback():
    prob = BarycenterProblem(two_gaussians(), None, MMD())
    seen = []
    opt = OptimizerSpec(batch_size=20, n_iter=10)
    g1, d1 = fit(prob, AffineGaussian(2), opt, SeededRng(4), callback=lambda t, rec, gen: seen.append(t))
    g2, d2 = fit(prob, AffineGaussian(2), opt, SeededRng(4))
    assert seen == list(range(10))
    assert np.array_equal(g1.get_params(), g2.get_params())
    assert d1.loss == d2.loss


def test_frozen_identity_critics_reduce_to_plain_mmd():
    ms = two_gaussians()
    kernel = rq_mixture()
    opt = OptimizerSpec(batch_size=25, n_iter=15)
    smmd = BarycenterProblem(ms, None, SMMD(SmmdConfig(kernel=kernel)))
    plain = BarycenterProblem(ms, None, MMD(kernel))
    critics = [FeatureMap.identity(2) for _ in ms]
    ga, _, da = adversarial_fit(smmd, AffineGaussian(2), critics, opt, SeededRng(5), freeze_critics=True)
    gb, db = fit(plain, AffineGaussian(2), opt, SeededRng(5))
    assert np.allclose(ga.get_params(), gb.get_params(), atol=1e-12)
    assert np.allclose(da.loss, db.loss, atol=1e-12)


def test_adversarial_fit_trains_critics():
    ms = two_gaussians(100)
    prob = BarycenterProblem(ms, None, SMMD(SmmdConfig(n_critic=2)))
    critics = [FeatureMap((2, 8, 4), rng=SeededRng(p)) for p in range(2)]
    before = [c.get_params() for c in critics]
    gen, critics, diag = adversarial_fit(prob, AffineGaussian(2), critics,
                                         OptimizerSpec(batch_size=20, n_iter=5), SeededRng(6))
    assert all(np.any(c.get_params() != b) for c, b in zip(critics, before))
    assert np.all(np.isfinite(diag.loss)) and np.all(np.isfinite(diag.critic_objective))


def test_adversarial_fit_validates_critics():
    prob = BarycenterProblem(two_gaussians(), None, SMMD())
    opt = OptimizerSpec(batch_size=5, n_iter=1)
    with pytest.raises(InvalidInputError):
        adversarial_fit(prob, AffineGaussian(2), [None, None], opt, SeededRng(0))
    with pytest.raises(InvalidInputError):
        adversarial_fit(prob, AffineGaussian(2), [FeatureMap.identity(3)] * 2, opt, SeededRng(0))
    with pytest.raises(InvalidInputError):
        adversarial_fit(prob, AffineGaussian(2), [FeatureMap.identity(2)], opt, SeededRng(0))


# -- diagnostics -----------------------------------------------------------

def test_ema_and_running_minimum():
    vals = [4.0, np.nan, 2.0, 3.0]
    out = ema(vals, factor=0.5)
    assert out[0] == 4.0 and out[1] == 4.0 and out[2] == 3.0 and out[3] == 3.0
    diag = Diagnostics()
    g = SeededRng(0).generator
    for v in g.uniform(size=50):
        diag.append(StepRecord(float(v), float(v), 0.1, 0.0))
    assert np.all(np.diff(diag.running_min_grad_norm2) <= 0)


def test_trace_round_trip_and_reproducible_bytes(tmp_path):
    prob = BarycenterProblem(two_gaussians(), None, MMD())
    opt = OptimizerSpec(batch_size=20, n_iter=8)
    paths = []
    for name in ("a.csv", "b.csv"):
        _, diag = fit(prob, AffineGaussian(2), opt, SeededRng(7))
        write_trace(diag, tmp_path / name, timing=False)
        paths.append(tmp_path / name)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    trace = read_trace(paths[0])
    assert np.array_equal(trace["loss"], diag.loss)
    assert np.all(np.isnan(trace["wall_ms"]))
    write_trace(diag, tmp_path / "t.csv")
    assert np.all(read_trace(tmp_path / "t.csv")["wall_ms"] >= 0)


def test_gradient_quality_for_mmd_is_exact():
    ms = [DiscreteMeasure(m.points[:20]) for m in two_gaussians()]
    prob = BarycenterProblem(ms, None, MMD(RBF(1.0)))
    q = gradient_quality(prob, AffineGaussian(2), probes=5, rng=SeededRng(0), n_latent=20)
    assert q.delta <= 1e-6


def test_gradient_quality_for_sinkhorn_bias_is_small():
    g = SeededRng(1).generator
    ms = [DiscreteMeasure(g.uniform(size=(8, 2)) + p) for p in range(2)]
    prob = BarycenterProblem(ms, None, SinkhornDivergence(SinkhornConfig(0.1, tol=1e-6)))
    gen = AffineGaussian(2, [0.5, 0.5], 0.3 * np.eye(2))
    q = gradient_quality(prob, gen, probes=5, rng=SeededRng(2), n_latent=8, batch_size=8)
    assert q.delta <= 1e-3 * q.grad_norm


def test_minibatch_variance_halves_when_batch_doubles():
    ms = [DiscreteMeasure(m.points[:200]) for m in two_gaussians()]
    prob = BarycenterProblem(ms, None, MMD(RBF(1.0)))
    gen = AffineGaussian(2, [0.5, 0.5], 0.5 * np.eye(2))
    latent = gen.sample_latent(200, SeededRng(3))
    ratios = []
    for seed in range(3):
        s1 = gradient_quality(prob, gen, 200, SeededRng(10 + seed), batch_size=16, latent=latent).sigma2
        s2 = gradient_quality(prob, gen, 200, SeededRng(20 + seed), batch_size=32, latent=latent).sigma2
        ratios.append(s2 / s1)
    assert 0.3 <= np.median(ratios) <= 0.7


def test_full_batch_gradient_matches_loss_derivative():
    ms = [DiscreteMeasure(m.points[:30]) for m in two_gaussians()]
    prob = BarycenterProblem(ms, [0.4, 0.6], MMD(rq_mixture()))
    gen = Mlp(2, latent_dim=2, hidden=(6, 6), rng=SeededRng(0))
    latent = gen.sample_latent(30, SeededRng(1))
    theta = gen.get_params()
    g = full_batch_gradient(prob, gen, latent)
    v = SeededRng(2).generator.standard_normal(theta.size)
    h = 1e-6
    fd = (full_batch_loss(prob, gen, latent, theta=theta + h * v)
          - full_batch_loss(prob, gen, latent, theta=theta - h * v)) / (2 * h)
    assert g @ v == pytest.approx(fd, rel=1e-5)


def test_curvature_proxy_of_quadratic_like_loss():
    # entropic OT against one point mass is an exact quadratic in the affine mean
    prob = BarycenterProblem([DiscreteMeasure([[0.0, 0.0]])], [1.0], EntropicOT(SinkhornConfig(0.1)))
    gen = AffineGaussian(2, [1.0, 1.0], np.zeros((2, 2)))
    latent = gen.sample_latent(10, SeededRng(0))
    M = curvature_proxy(prob, gen, latent, SeededRng(1), n_dirs=8)
    assert 0 < M <= 2.0 * (1 + latent.var(axis=0).sum() + (latent.mean(axis=0) ** 2).sum()) * 1.01
    assert M >= 2.0 * 0.3


def test_stationarity_learning_rate_and_report():
    assert stationarity_lr(2.0, 4.0, 1.0, 100) == pytest.approx(0.1)
    assert stationarity_lr(2.0, 100.0, 1e-6, 1) == pytest.approx(0.01)
    diag = Diagnostics()
    for t in range(100):
        v = 1.0 / (t + 1)
        diag.append(StepRecord(v, v, 0.1, 0.0))
    rep = stationarity_report(diag, regret=1.0, curvature=1.0, sigma2=1.0, delta=0.0, lr=0.1)
    assert rep.running_min_nonincreasing and rep.trend_decreasing
    assert rep.threshold == pytest.approx(np.sqrt(8.0 / 100))
    assert rep.passed == (rep.final_running_min <= 10 * rep.threshold)
