"""Scikit-learn style front end for generative barycenter fitting."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_measures, check_weights
from .entropic_ot import SinkhornConfig
from .exceptions import InvalidInputError
from .generators import AffineGaussian, EllipsePair, GaussianMixture, Mlp
from .kernels import FeatureMap, SmmdConfig, rational_quadratic
from .measures import SeededRng
from .solver import (MMD, SMMD, BarycenterProblem, EntropicOT, OptimizerSpec,
                     SinkhornDivergence, adversarial_fit, fit)

GENERATORS = ("affine", "mixture", "mlp", "ellipse")
DISCREPANCIES = ("sinkhorn", "entropic", "mmd", "smmd")


def make_discrepancy(kind, epsilon=0.1, p=2, tol=1e-3, max_iter=5000, anneal=0.5,
                     lengthscale=2.0, alpha=1.0, gp_coef=1.0, n_critic=5,
                     independent_batches=False):
    if kind in ("sinkhorn", "entropic"):
        cfg = SinkhornConfig(epsilon, p, max_iter, tol, anneal)
        if kind == "entropic":
            return EntropicOT(cfg)
        return SinkhornDivergence(cfg, independent_batches)
    if kind == "mmd":
        return MMD(rational_quadratic(lengthscale, alpha))
    if kind == "smmd":
        return SMMD(SmmdConfig(gp_coef=gp_coef, n_critic=n_critic))
    raise InvalidInputError(f"unknown discrepancy {kind!r}; expected one of {DISCREPANCIES}")


def make_generator(kind, dim, measures=None, beta=None, latent_dim=2,
                   hidden=(50, 200, 1000, 200), rng=None):
    if kind == "affine":
        return AffineGaussian(dim)
    if kind == "mixture":
        if measures is None:
            raise InvalidInputError("the mixture generator is initialized from the measures")
        return GaussianMixture.from_measures(measures, beta)
    if kind == "mlp":
        return Mlp(dim, latent_dim, hidden, rng=rng)
    if kind == "ellipse":
        if dim != 2:
            raise InvalidInputError("the ellipse generator is planar")
        return EllipsePair(rng=rng)
    raise InvalidInputError(f"unknown generator {kind!r}; expected one of {GENERATORS}")


class GenerativeBarycenter(BaseEstimator):
    """Fit a push-forward model to the weighted barycenter of point clouds.

    Parameters
    ----------
    generator : {"affine", "mixture", "mlp", "ellipse"}
    discrepancy : {"sinkhorn", "entropic", "mmd", "smmd"}
    beta : array-like, optional
        Barycentric weights, one per measure; uniform if omitted.
    epsilon, tol, anneal : float
        Sinkhorn settings for the OT discrepancies.
    independent_batches : bool
        Evaluate the ``"sinkhorn"`` self terms across independent batches,
        see :class:`genbary.solver.SinkhornDivergence`.
    lengthscale : float
        Rational quadratic lengthscale for ``"mmd"``.
    optimizer : {"adam", "sgd"}
    learning_rate, decay, decay_every, batch_size, n_iter
        Optimizer schedule, see :class:`genbary.solver.OptimizerSpec`.
    latent_dim, hidden
        Shape of the ``"mlp"`` generator.
    random_state : int or None

    Attributes
    ----------
    generator_ : Generator
    diagnostics_ : Diagnostics
    weights_ : ndarray
    n_features_in_ : int
    """

    def __init__(self, generator="affine", discrepancy="sinkhorn", beta=None,
                 epsilon=0.1, tol=1e-3, anneal=0.5, independent_batches=False, lengthscale=2.0,
                 optimizer="adam", learning_rate=0.01, decay=1.0, decay_every=1,
                 batch_size=150, n_iter=500, latent_dim=2,
                 hidden=(50, 200, 1000, 200), random_state=None):
        self.generator = generator
        self.discrepancy = discrepancy
        self.beta = beta
        self.epsilon = epsilon
        self.tol = tol
        self.anneal = anneal
        self.independent_batches = independent_batches
        self.lengthscale = lengthscale
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.decay = decay
        self.decay_every = decay_every
        self.batch_size = batch_size
        self.n_iter = n_iter
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.random_state = random_state

    def _problem(self, measures, beta):
        D = make_discrepancy(self.discrepancy, epsilon=self.epsilon, tol=self.tol,
                             anneal=self.anneal, lengthscale=self.lengthscale,
                             independent_batches=self.independent_batches)
        return BarycenterProblem(measures, beta, D)

    def fit(self, X, y=None):
        """Fit to the measures in ``X`` (a list of arrays, or rows grouped by ``y``)."""
        measures = check_measures(X, y)
        beta = check_weights(self.beta, len(measures))
        rng = SeededRng(0 if self.random_state is None else self.random_state)
        problem = self._problem(measures, beta)
        gen = make_generator(self.generator, problem.dim, measures, beta,
                             self.latent_dim, self.hidden, rng)
        opt = OptimizerSpec(self.optimizer, self.learning_rate, decay=self.decay,
                            decay_every=self.decay_every, batch_size=self.batch_size,
                            n_iter=self.n_iter)
        if self.discrepancy == "smmd":
            critics = [FeatureMap((problem.dim, 16, 16), rng=rng) for _ in measures]
            gen, critics, diag = adversarial_fit(problem, gen, critics, opt, rng)
            self.critics_ = critics
        else:
            gen, diag = fit(problem, gen, opt, rng)
        self.generator_ = gen
        self.diagnostics_ = diag
        self.weights_ = beta
        self.n_features_in_ = problem.dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "generator_"):
            raise NotFittedError("call fit before using this estimator")

    def sample(self, n_samples=1000, random_state=None):
        """Draw ``n_samples`` points from the fitted barycenter model."""
        self._check_fitted()
        seed = self.random_state if random_state is None else random_state
        rng = SeededRng(0 if seed is None else seed)
        return np.array(self.generator_.sample(int(n_samples), rng).points)

    def score(self, X, y=None):
        """Negative barycentric loss of the fitted model against ``X``.

        Evaluated on full measures with ``batch_size`` generator draws.
        """
        self._check_fitted()
        measures = check_measures(X, y)
        if measures[0].dim != self.n_features_in_:
            raise InvalidInputError("X has a different dimension than the fitted data")
        beta = check_weights(self.beta, len(measures))
        problem = self._problem(measures, beta)
        batch = self.generator_.sample(self.batch_size, SeededRng(0))
        critics = getattr(self, "critics_", None)
        total = 0.0
        for p, (D, b, mu) in enumerate(zip(problem.discrepancies, beta, measures)):
            if b > 0:
                total += b * D.value(batch, mu, critics[p] if critics is not None else None)
        return -float(total)
