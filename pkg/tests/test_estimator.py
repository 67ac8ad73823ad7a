import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from genbary import GenerativeBarycenter
from genbary.estimator import make_discrepancy, make_generator
from genbary.exceptions import InvalidInputError
from genbary.measures import SeededRng


def blobs(seed=0, n=150):
    g = SeededRng(seed).generator
    return [0.2 * g.standard_normal((n, 2)) + [-1.0, 0.0], 0.2 * g.standard_normal((n, 2)) + [1.0, 0.0]]


def test_params_follow_sklearn_conventions():
    est = GenerativeBarycenter(generator="mlp", n_iter=3, hidden=(4,))
    params = est.get_params()
    assert params["generator"] == "mlp" and params["hidden"] == (4,)
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(n_iter=7)
    assert est.n_iter == 7


def test_unfitted_estimator_refuses_to_sample():
    est = GenerativeBarycenter()
    with pytest.raises(NotFittedError):
        est.sample(5)
    with pytest.raises(NotFittedError):
        est.score(blobs())


def test_affine_mmd_fit_moves_toward_weighted_mean():
    X = blobs()
    est = GenerativeBarycenter(generator="affine", discrepancy="mmd", beta=[3.0, 1.0],
                               learning_rate=0.05, batch_size=100, n_iter=300, random_state=0)
    est.fit(X)
    assert np.allclose(est.weights_, [0.75, 0.25])
    assert est.n_features_in_ == 2 and est.diagnostics_.n_iter == 300
    mean = est.sample(4000).mean(axis=0)
    assert mean[0] < 0.0
    assert est.score(X) <= 0.0


def test_sinkhorn_fit_approaches_uniform_barycenter_mean():
    est = GenerativeBarycenter(generator="affine", discrepancy="sinkhorn", epsilon=0.1,
                               learning_rate=0.05, batch_size=64, n_iter=150, random_state=1)
    est.fit(blobs(1))
    assert np.linalg.norm(est.generator_.mean - [0.0, 0.0]) < 0.1


def test_labels_group_rows_into_measures():
    X = blobs(2)
    stacked = np.vstack(X)
    y = np.repeat(["b", "a"], 150)
    kw = dict(generator="affine", discrepancy="mmd", batch_size=20, n_iter=5, random_state=3)
    a = GenerativeBarycenter(**kw).fit(stacked, y)
    # sorted labels put the second block first
    b = GenerativeBarycenter(**kw).fit([X[1], X[0]])
    assert np.array_equal(a.generator_.get_params(), b.generator_.get_params())


def test_sampling_is_reproducible():
    est = GenerativeBarycenter(discrepancy="mmd", batch_size=20, n_iter=5, random_state=4).fit(blobs())
    assert np.array_equal(est.sample(10), est.sample(10))
    assert not np.array_equal(est.sample(10, random_state=1), est.sample(10, random_state=2))


def test_smmd_fit_keeps_critics():
    est = GenerativeBarycenter(discrepancy="smmd", batch_size=16, n_iter=3, random_state=5)
    est.fit(blobs(n=40))
    assert len(est.critics_) == 2
    assert np.isfinite(est.score(blobs(n=40)))


def test_mixture_and_ellipse_generators():
    est = GenerativeBarycenter(generator="mixture", discrepancy="mmd", batch_size=20, n_iter=3).fit(blobs())
    assert est.generator_.n_components == 2
    est = GenerativeBarycenter(generator="ellipse", discrepancy="mmd", batch_size=20, n_iter=3).fit(blobs())
    assert est.sample(5).shape == (5, 2)


def test_input_validation():
    with pytest.raises(InvalidInputError):
        GenerativeBarycenter().fit(np.zeros((4, 2)))
    with pytest.raises(InvalidInputError):
        GenerativeBarycenter().fit([np.zeros((3, 2)), np.zeros((3, 3))])
    with pytest.raises(InvalidInputError):
        GenerativeBarycenter(beta=[1.0]).fit(blobs())
    with pytest.raises(InvalidInputError):
        GenerativeBarycenter(beta=[-1.0, 2.0]).fit(blobs())
    with pytest.raises(InvalidInputError):
        GenerativeBarycenter(generator="gan").fit(blobs())
    with pytest.raises(InvalidInputError):
        GenerativeBarycenter(discrepancy="kl").fit(blobs())
    with pytest.raises(InvalidInputError):
        make_generator("ellipse", 3)
    with pytest.raises(InvalidInputError):
        make_generator("mixture", 2)
    est = GenerativeBarycenter(discrepancy="mmd", batch_size=10, n_iter=2).fit(blobs())
    with pytest.raises(InvalidInputError):
        est.score([np.zeros((5, 3))])


def test_make_discrepancy_kinds():
    assert make_discrepancy("sinkhorn", epsilon=0.2).config.epsilon == 0.2
    assert make_discrepancy("entropic").config.anneal == 0.5
    assert make_discrepancy("mmd", lengthscale=1.5).kernel.terms == ((1.0, 1.5),)
    assert make_discrepancy("smmd", n_critic=3).config.n_critic == 3
