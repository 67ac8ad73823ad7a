"""Exact desk-scale references for barycenter problems.

Brute-force assignment and multi-marginal solvers for uniform discrete
measures, the fixed-point Gaussian W2 barycenter, the MMD mixture
barycenter, and a central finite-difference gradient.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .entropic_ot import cost_matrix
from .exceptions import ConvergenceError, InvalidInputError, NumericalError
from .kernels import mmd2
from .measures import GaussianSpec, mixture

ENUMERATION_LIMIT = 8
HUNGARIAN_LIMIT = 64


def exact_ot_uniform(X, Y, p=2, backend="enumerate"):
    """Exact OT between two uniform N-atom clouds.

    Minimizes ``(1/N) sum_i C[i, sigma(i)]`` over permutations ``sigma``.

    Parameters
    ----------
    backend : {"enumerate", "hungarian"}
        Enumeration is limited to N <= 8, the Hungarian backend to N <= 64.

    Returns
    -------
    value : float
    perm : ndarray of int
        ``perm[i]`` is the atom of ``Y`` matched to atom ``i`` of ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = X.shape[0]
    if Y.shape[0] != n:
        raise InvalidInputError("exact_ot_uniform needs equal atom counts")
    C = cost_matrix(X, Y, p)
    if backend == "enumerate":
        if n > ENUMERATION_LIMIT:
            raise InvalidInputError(f"enumeration backend supports N <= {ENUMERATION_LIMIT}")
        best, best_perm = np.inf, None
        rows = np.arange(n)
        for perm in itertools.permutations(range(n)):
            v = C[rows, perm].sum()
            if v < best:
                best, best_perm = v, perm
        return best / n, np.array(best_perm)
    if backend == "hungarian":
        if n > HUNGARIAN_LIMIT:
            raise InvalidInputError(f"hungarian backend supports N <= {HUNGARIAN_LIMIT}")
        rows, cols = linear_sum_assignment(C)
        return C[rows, cols].sum() / n, cols[np.argsort(rows)]
    raise InvalidInputError(f"unknown backend {backend!r}")


@dataclass
class MultiMarginalResult:
    """Optimal deterministic coupling of P uniform N-atom measures.

    ``assignment[p][n]`` is the atom of measure ``p`` in the n-th coupled
    tuple (measure 0 is the identity). ``barycenter`` holds
    ``T(X) = sum_p beta_p x_p`` for each tuple.
    """

    assignment: tuple
    barycenter: np.ndarray
    value: float
    max_value: float
    max_assignment: tuple


def multimarginal_bruteforce(measures, beta):
    """Exhaustive multi-marginal solver over permutation couplings.

    Solves ``min_Q E_Q sum_p beta_p ||x_p - T(X)||^2`` and, separately, the
    equivalent ``max_Q E_Q ||T(X)||^2``; both optima are returned so
    callers can check they select the same coupling.
    """
    beta = np.asarray(beta, dtype=float)
    P = len(measures)
    if P != beta.shape[0] or P < 1:
        raise InvalidInputError("one weight per measure is required")
    n = measures[0].n
    if any(m.n != n or not m.is_uniform() for m in measures):
        raise InvalidInputError("multi-marginal oracle needs uniform measures of equal size")
    if n > 6 or P > 3:
        raise InvalidInputError("instance too large for enumeration (N <= 6, P <= 3)")
    pts = [m.points for m in measures]
    identity = tuple(range(n))
    best = (np.inf, None)
    best_max = (-np.inf, None)
    for perms in itertools.product(itertools.permutations(range(n)), repeat=P - 1):
        assign = (identity,) + perms
        tuples = np.stack([pts[p][list(assign[p])] for p in range(P)])  # (P, n, d)
        T = np.einsum("p,pnd->nd", beta, tuples)
        spread = np.einsum("p,pn->", beta, np.sum((tuples - T) ** 2, axis=2)) / n
        moment = np.sum(T ** 2) / n
        if spread < best[0] - 1e-15:
            best = (spread, assign)
        if moment > best_max[0] + 1e-15:
            best_max = (moment, assign)
    assign = best[1]
    tuples = np.stack([pts[p][list(assign[p])] for p in range(P)])
    T = np.einsum("p,pnd->nd", beta, tuples)
    return MultiMarginalResult(assign, T, float(best[0]), float(best_max[0]), best_max[1])


def w2_barycenter_objective(candidate, measures, beta, backend="enumerate"):
    """``sum_p beta_p W2^2(candidate, mu_p)`` by exact assignment."""
    beta = np.asarray(beta, dtype=float)
    if len(measures) != beta.shape[0]:
        raise InvalidInputError("one weight per measure is required")
    for m in [candidate, *measures]:
        if not m.is_uniform() or m.n != candidate.n:
            raise InvalidInputError("all measures must be uniform with equal atom counts")
    return float(sum(b * exact_ot_uniform(candidate.points, m.points, 2, backend)[0]
                     for b, m in zip(beta, measures)))


def _sqrtm_psd(S):
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_w2_barycenter(specs, beta, tol=1e-10, max_iter=500):
    """W2 barycenter of Gaussians.

    The mean is ``sum_p beta_p m_p``. The covariance solves
    ``S = sum_p beta_p (S^1/2 S_p S^1/2)^1/2`` and is found by the
    fixed-point map ``S <- S^-1/2 (sum_p beta_p (S^1/2 S_p S^1/2)^1/2)^2 S^-1/2``,
    started from the arithmetic mean of the covariances.
    """
    beta = np.asarray(beta, dtype=float)
    if len(specs) != beta.shape[0] or len(specs) < 1:
        raise InvalidInputError("one weight per Gaussian is required")
    specs = [s if isinstance(s, GaussianSpec) else GaussianSpec(*s) for s in specs]
    mean = sum(b * s.mean for b, s in zip(beta, specs))
    covs = [s.covariance for s in specs]
    S = sum(b * C for b, C in zip(beta, covs))
    d = S.shape[0]
    if np.allclose(S, 0.0, atol=1e-300):
        return GaussianSpec(mean, np.zeros((d, d)))
    for _ in range(max_iter):
        root = _sqrtm_psd(S)
        M = sum(b * _sqrtm_psd(root @ C @ root) for b, C in zip(beta, covs))
        vals, vecs = np.linalg.eigh(root)
        if vals.min() <= 1e-15 * max(vals.max(), 1.0):
            # singular iterate: fall back to the plain averaging map
            S_new = M
        else:
            inv_root = (vecs / vals) @ vecs.T
            S_new = inv_root @ M @ M @ inv_root
        S_new = 0.5 * (S_new + S_new.T)
        if not np.all(np.isfinite(S_new)):
            raise NumericalError("Gaussian barycenter iteration diverged")
        if np.linalg.norm(S_new - S) <= tol:
            return GaussianSpec(mean, S_new)
        S = S_new
    raise ConvergenceError(f"Gaussian barycenter fixed point not reached in {max_iter} iterations")


def gaussian_w2_squared(a, b):
    """Closed-form W2^2 between two Gaussians (Bures-Wasserstein)."""
    ra = _sqrtm_psd(a.covariance)
    cross = _sqrtm_psd(ra @ b.covariance @ ra)
    return float(np.sum((a.mean - b.mean) ** 2)
                 + np.trace(a.covariance + b.covariance - 2.0 * cross))


def mmd_mixture_objective(measures, beta, k, candidate=None):
    """``F(nu) = sum_p beta_p MMD^2(nu, mu_p)`` at the mixture, or at ``candidate``.

    Returns ``(F, nu)`` where ``nu`` is the weighted concatenation
    ``sum_p beta_p mu_p`` unless a candidate is given.
    """
    beta = np.asarray(beta, dtype=float)
    nu = mixture(measures, beta) if candidate is None else candidate
    value = float(sum(b * mmd2(k, nu, m) for b, m in zip(beta, measures) if b > 0))
    return value, nu


def finite_difference_grad(loss, params, h=1e-5):
    """Central differences ``(L(x + h e_i) - L(x - h e_i)) / 2h`` coordinate-wise."""
    x = np.array(params, dtype=float)
    if not h > 0:
        raise InvalidInputError("step must be > 0")
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        up = loss(x.copy())
        x.flat[i] = orig - h
        down = loss(x.copy())
        x.flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError(f"non-finite loss while probing coordinate {i}")
        grad.flat[i] = (up - down) / (2.0 * h)
    return grad
