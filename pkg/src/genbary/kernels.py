"""Kernels, the biased MMD^2 estimator and its gradients, and the SMMD critic.

Both kernel families are radial, ``k(x, y) = phi(||x - y||^2)``, so a kernel
only needs to provide ``phi`` and its derivative in the squared distance.
"""

from dataclasses import dataclass

import numpy as np

from . import _mlp
from .exceptions import InvalidInputError
from .measures import as_rng


@dataclass(frozen=True)
class RBF:
    """Gaussian kernel ``exp(-r^2 / (2 l^2))``."""

    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise InvalidInputError("RBF lengthscale must be > 0")

    def profile(self, r2):
        k = np.exp(-r2 / (2.0 * self.lengthscale ** 2))
        return k, -k / (2.0 * self.lengthscale ** 2)

    @property
    def diagonal(self):
        return 1.0


@dataclass(frozen=True)
class RationalQuadraticMixture:
    """Sum of rational quadratic kernels ``(1 + r^2 / (2 a l^2))^(-a)``.

    Parameters
    ----------
    terms : tuple of (alpha, lengthscale)
    """

    terms: tuple

    def __post_init__(self):
        terms = tuple((float(a), float(l)) for a, l in self.terms)
        if not terms:
            raise InvalidInputError("rational quadratic mixture needs at least one term")
        if any(a <= 0 or l <= 0 for a, l in terms):
            raise InvalidInputError("rational quadratic alphas and lengthscales must be > 0")
        object.__setattr__(self, "terms", terms)

    def profile(self, r2):
        k = np.zeros_like(r2)
        dk = np.zeros_like(r2)
        for a, l in self.terms:
            base = 1.0 + r2 / (2.0 * a * l ** 2)
            t = base ** (-a)
            k += t
            dk += -t / (base * 2.0 * l ** 2)
        return k, dk

    @property
    def diagonal(self):
        return float(len(self.terms))


def rational_quadratic(lengthscale=2.0, alpha=1.0):
    return RationalQuadraticMixture(((alpha, lengthscale),))


def rq_mixture(alphas=(0.2, 0.5, 1.0, 2.0, 5.0), lengthscale=1.0):
    return RationalQuadraticMixture(tuple((a, lengthscale) for a in alphas))


def _pairwise_diff(X, Y):
    return X[:, None, :] - Y[None, :, :]


def gram(k, X, Y):
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    diff = _pairwise_diff(X, Y)
    return k.profile(np.einsum("ijd,ijd->ij", diff, diff))[0]


def kernel_eval(k, x, y):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise InvalidInputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    r2 = np.array(np.sum((x - y) ** 2))
    return float(k.profile(r2)[0])


def _weighted_pull(k, X, w_x, Y, w_y):
    """Return (w_x^T K w_y, G) with G[n] = sum_m w_y[m] * d k(x_n, y_m) / d x_n."""
    diff = _pairwise_diff(X, Y)
    K, dK = k.profile(np.einsum("ijd,ijd->ij", diff, diff))
    D = 2.0 * dK * w_y[None, :]
    G = X * D.sum(axis=1)[:, None] - D @ Y
    return float(w_x @ K @ w_y), G


def mmd2_arrays(k, X, a, Y, b, grad_x=False, grad_y=False):
    """Biased MMD^2 between weighted point sets, optionally with point gradients."""
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    kxx, Gxx = _weighted_pull(k, X, a, X, a)
    kyy, Gyy = _weighted_pull(k, Y, b, Y, b)
    kxy, Gxy = _weighted_pull(k, X, a, Y, b)
    value = kxx + kyy - 2.0 * kxy
    out = [value]
    if grad_x:
        out.append(2.0 * a[:, None] * (Gxx - Gxy))
    if grad_y:
        _, Gyx = _weighted_pull(k, Y, b, X, a)
        out.append(2.0 * b[:, None] * (Gyy - Gyx))
    return out[0] if len(out) == 1 else tuple(out)


def mmd2(k, mu_x, mu_y):
    """V-statistic ``a^T Kxx a + b^T Kyy b - 2 a^T Kxy b``."""
    return mmd2_arrays(k, mu_x.points, mu_x.weights, mu_y.points, mu_y.weights)


def mmd2_grad_points(k, mu_x, mu_y):
    """Gradient of :func:`mmd2` with respect to the atoms of ``mu_x``."""
    return mmd2_arrays(k, mu_x.points, mu_x.weights, mu_y.points, mu_y.weights,
                       grad_x=True)[1]


class FeatureMap:
    """ReLU MLP feature extractor ``f_psi`` for deep kernels.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths, input dimension first.
    params : list of (W, b), optional
        Initialized with fan-in scaled uniform draws from ``rng`` if omitted.
    """

    def __init__(self, sizes, params=None, rng=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise InvalidInputError("feature map needs input and output widths >= 1")
        if params is None:
            params = _mlp.init_params(self.sizes, as_rng(rng).generator)
        self.params = [(np.array(W, float), np.array(b, float)) for W, b in params]

    @classmethod
    def identity(cls, dim):
        """Exact identity map, ``x = relu(x) - relu(-x)``."""
        eye = np.eye(dim)
        params = [(np.hstack([eye, -eye]), np.zeros(2 * dim)),
                  (np.vstack([eye, -eye]), np.zeros(dim))]
        return cls((dim, 2 * dim, dim), params)

    @property
    def input_dim(self):
        return self.sizes[0]

    def get_params(self):
        return _mlp.flatten(self.params)

    def set_params(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (_mlp.n_params(self.sizes),):
            raise InvalidInputError("parameter vector has the wrong length")
        if not np.all(np.isfinite(vec)):
            raise InvalidInputError("parameter vector has non-finite entries")
        self.params = _mlp.unflatten(vec, self.sizes)

    def __call__(self, X):
        return _mlp.forward(self.params, X)[0]

    def copy(self):
        return FeatureMap(self.sizes, [(W.copy(), b.copy()) for W, b in self.params])


@dataclass(frozen=True)
class SmmdConfig:
    """Deep-kernel MMD settings: feature-space kernel, gradient penalty, critic steps."""

    kernel: object = rq_mixture()
    gp_coef: float = 1.0
    n_critic: int = 5

    def __post_init__(self):
        if self.gp_coef < 0:
            raise InvalidInputError("gradient penalty coefficient must be >= 0")
        if self.n_critic < 1:
            raise InvalidInputError("n_critic must be >= 1")


def _interpolates(X, Y, t):
    n = min(X.shape[0], Y.shape[0])
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    return t[:, None] * X[:n] + (1.0 - t[:, None]) * Y[:n]


def smmd_critic_objective(cfg, psi, mu_x, mu_y, t=0.5, return_grad=False):
    """Critic objective ``MMD^2(f#mu_x, f#mu_y) - gp_coef * P(psi)``.

    ``P`` is the mean squared deviation of the Frobenius norm of the input
    Jacobian of ``f`` from 1, evaluated at the interpolates
    ``t x_i + (1 - t) y_i`` of index-paired atoms. ``t`` may be a scalar or
    one coefficient per pair. The critic ascends this objective.
    """
    if psi.input_dim != mu_x.dim or mu_x.dim != mu_y.dim:
        raise InvalidInputError("feature map input dimension does not match the measures")
    fx, cache_x = _mlp.forward(psi.params, mu_x.points)
    fy, cache_y = _mlp.forward(psi.params, mu_y.points)
    value, gfx, gfy = mmd2_arrays(cfg.kernel, fx, mu_x.weights, fy, mu_y.weights,
                                  grad_x=True, grad_y=True)
    objective = value
    penalty, pgrads = 0.0, None
    if cfg.gp_coef > 0 or return_grad:
        penalty, pgrads = _mlp.jacobian_penalty(
            psi.params, _interpolates(mu_x.points, mu_y.points, t))
        objective = value - cfg.gp_coef * penalty
    if not return_grad:
        return objective
    gx, _ = _mlp.backward(psi.params, cache_x, gfx)
    gy, _ = _mlp.backward(psi.params, cache_y, gfy)
    grads = []
    for (dWx, dbx), (dWy, dby), (dWp, dbp) in zip(gx, gy, pgrads):
        grads.append((dWx + dWy - cfg.gp_coef * dWp, dbx + dby - cfg.gp_coef * dbp))
    return objective, _mlp.flatten(grads)


def feature_mmd2_grad_points(k, psi, mu_x, mu_y):
    """Feature-space MMD^2 and its gradient with respect to the atoms of ``mu_x``."""
    fx, cache_x = _mlp.forward(psi.params, mu_x.points)
    fy = psi(mu_y.points)
    value, gfx = mmd2_arrays(k, fx, mu_x.weights, fy, mu_y.weights, grad_x=True)
    _, grad_points = _mlp.backward(psi.params, cache_x, gfx)
    return value, grad_points
