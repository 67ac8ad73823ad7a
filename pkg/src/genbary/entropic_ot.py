"""Log-domain Sinkhorn, entropic OT cost, Sinkhorn divergence and its gradients.

Potentials follow the convention in which the optimal plan is
``pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)``, and the entropy term is
``KL(pi || a (x) b)``. With it a pair of Diracs has cost ``C_11`` exactly.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConvergenceError, InvalidInputError, NumericalError


@dataclass(frozen=True)
class SinkhornConfig:
    """Entropic OT settings.

    Parameters
    ----------
    epsilon : float
        Entropic regularization strength.
    p : int
        Cost exponent, ``C_ij = ||x_i - y_j||^p`` with ``p`` in {1, 2}.
    max_iter : int
        Iteration cap at the target ``epsilon``.
    tol : float
        Stop when the sup-norm change of the scaled potentials ``f / eps``
        and ``g / eps`` falls below this. The column marginals of the plan
        then hold to about ``tol`` relative error.
    anneal : float or None
        If set, start at ``epsilon = max(C)`` and shrink by this factor,
        one update per stage, before iterating at the target.
    scheme : {"alternating", "averaged"}
        ``alternating`` updates ``f`` then ``g`` (block ascent on the dual).
        ``averaged`` updates both from the previous iterate and averages
        each with its old value, so a symmetric problem stays symmetric.
    """

    epsilon: float = 0.1
    p: int = 2
    max_iter: int = 5000
    tol: float = 1e-6
    anneal: float = None
    scheme: str = "alternating"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be > 0")
        if self.p not in (1, 2):
            raise InvalidInputError("cost exponent must be 1 or 2")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be >= 1")
        if not self.tol > 0:
            raise InvalidInputError("tol must be > 0")
        if self.anneal is not None and not 0 < self.anneal < 1:
            raise InvalidInputError("anneal factor must lie in (0, 1)")
        if self.scheme not in ("alternating", "averaged"):
            raise InvalidInputError(f"unknown Sinkhorn scheme {self.scheme!r}")


@dataclass
class SinkhornResult:
    f: np.ndarray
    g: np.ndarray
    converged: bool
    n_iter: int
    cost: float
    epsilon: float
    dual_history: list = field(default=None, repr=False)
    _C: np.ndarray = field(default=None, repr=False)
    _a: np.ndarray = field(default=None, repr=False)
    _b: np.ndarray = field(default=None, repr=False)

    def log_plan(self):
        with np.errstate(divide="ignore"):
            return (np.log(self._a)[:, None] + np.log(self._b)[None, :]
                    + (self.f[:, None] + self.g[None, :] - self._C) / self.epsilon)

    def plan(self):
        return np.exp(self.log_plan())

    def marginal_error(self):
        P = self.plan()
        return max(np.abs(P.sum(axis=1) - self._a).max(),
                   np.abs(P.sum(axis=0) - self._b).max())


def cost_matrix(X, Y, p=2):
    """``C_ij = ||x_i - y_j||_2^p``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if p not in (1, 2):
        raise InvalidInputError("cost exponent must be 1 or 2")
    diff = X[:, None, :] - Y[None, :, :]
    C = np.einsum("ijd,ijd->ij", diff, diff)
    return np.sqrt(C) if p == 1 else C


def _softmin_rows(A):
    # -logsumexp over axis 1
    m = A.max(axis=1)
    return -(m + np.log(np.exp(A - m[:, None]).sum(axis=1)))


def _epsilon_schedule(C, cfg):
    if cfg.anneal is None:
        return []
    eps0 = float(C.max())
    stages = []
    eps = eps0
    while eps > cfg.epsilon:
        stages.append(eps)
        eps *= cfg.anneal
    return stages


def _primal_cost(C, log_a, log_b, f, g, eps):
    log_P = log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - C) / eps
    P = np.exp(log_P)
    mass = P.sum()
    # <C, pi> + eps * KL(pi || a b); pi log(pi / ab) = pi (f + g - C) / eps
    return float(np.sum(P * (f[:, None] + g[None, :])) - eps * mass + eps)


def _check_simplex(w, name):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidInputError(f"{name} must be a probability vector")
    return w


def sinkhorn(C, a, b, cfg, record_dual=False):
    """Entropic OT between weight vectors ``a`` and ``b`` under cost ``C``.

    Log-domain softmin updates, alternating or averaged per ``cfg.scheme``.
    Zero-weight atoms are removed before solving; their potentials are
    filled in afterwards by one c-transform so every entry stays finite.
    The returned ``cost`` is the primal objective at the implicit plan.
    ``record_dual`` keeps the dual objective after every alternating sweep.
    """
    C = np.asarray(C, dtype=float)
    a = _check_simplex(a, "a")
    b = _check_simplex(b, "b")
    if C.shape != (a.shape[0], b.shape[0]):
        raise InvalidInputError(f"cost shape {C.shape} does not match weights")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("cost matrix must be finite")
    averaged = cfg.scheme == "averaged"
    if record_dual and averaged:
        raise InvalidInputError("dual history is only kept for the alternating scheme")
    ra, rb = a > 0, b > 0
    Cs = C[np.ix_(ra, rb)]
    log_a, log_b = np.log(a[ra]), np.log(b[rb])
    eps = cfg.epsilon

    f = np.zeros(Cs.shape[0])
    g = np.zeros(Cs.shape[1])
    for e in _epsilon_schedule(Cs, cfg):
        if averaged:
            f, g = (0.5 * (f + e * _softmin_rows((log_b + g / e)[None, :] - Cs / e)),
                    0.5 * (g + e * _softmin_rows((log_a + f / e)[None, :] - Cs.T / e)))
        else:
            f = e * _softmin_rows((log_b + g / e)[None, :] - Cs / e)
            g = e * _softmin_rows((log_a + f / e)[None, :] - Cs.T / e)

    history = [] if record_dual else None
    # iterate on potentials scaled by 1 / eps
    K = Cs / eps
    KT = np.ascontiguousarray(K.T)
    if averaged:
        u, v = f / eps, g / eps
    else:
        u = _softmin_rows((log_b + g / eps)[None, :] - K)
        v = g / eps
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        if averaged:
            u_new = 0.5 * (u + _softmin_rows((log_b + v)[None, :] - K))
            v_new = 0.5 * (v + _softmin_rows((log_a + u)[None, :] - KT))
        else:
            v_new = _softmin_rows((log_a + u)[None, :] - KT)
            u_new = _softmin_rows((log_b + v_new)[None, :] - K)
        # measured on the scaled potentials, whose change bounds the
        # relative marginal error of the plan
        change = max(np.abs(u_new - u).max(), np.abs(v_new - v).max())
        # any non-finite entry makes the change non-finite too
        if not np.isfinite(change):
            raise NumericalError("non-finite Sinkhorn potentials")
        u, v = u_new, v_new
        if record_dual:
            # after the f update the row marginals are exact, so the
            # exponential term of the dual equals one
            history.append(float(eps * (a[ra] @ u + b[rb] @ v)))
        if change <= cfg.tol:
            converged = True
            break
    if averaged:
        # closing c-transforms, taken from the same iterate
        u, v = (_softmin_rows((log_b + v)[None, :] - K),
                _softmin_rows((log_a + u)[None, :] - KT))
    f, g = eps * u, eps * v

    cost = _primal_cost(Cs, log_a, log_b, f, g, eps)
    f_full = np.empty(a.shape[0])
    g_full = np.empty(b.shape[0])
    f_full[ra], g_full[rb] = f, g
    if not ra.all():
        f_full[~ra] = eps * _softmin_rows(log_b[None, :] + (g[None, :] - C[np.ix_(~ra, rb)]) / eps)
    if not rb.all():
        g_full[~rb] = eps * _softmin_rows(log_a[None, :] + (f[None, :] - C[np.ix_(ra, ~rb)].T) / eps)
    return SinkhornResult(f_full, g_full, converged, it, cost, eps, history, C, a, b)


def sinkhorn_symmetric(C, a, cfg):
    """Entropic OT of a measure with itself, using averaged symmetric updates.

    The optimal plan of a symmetric problem is symmetric, so a single
    potential ``f = g`` suffices and the averaged fixed-point iteration
    converges much faster than plain alternation.
    """
    C = np.asarray(C, dtype=float)
    a = _check_simplex(a, "a")
    ra = a > 0
    Cs = C[np.ix_(ra, ra)]
    log_a = np.log(a[ra])
    eps = cfg.epsilon

    f = np.zeros(Cs.shape[0])
    for e in _epsilon_schedule(Cs, cfg):
        f = 0.5 * (f + e * _softmin_rows((log_a + f / e)[None, :] - Cs / e))
    K = Cs / eps
    u = f / eps
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        u_new = 0.5 * (u + _softmin_rows((log_a + u)[None, :] - K))
        change = np.abs(u_new - u).max()
        if not np.isfinite(change):
            raise NumericalError("non-finite Sinkhorn potentials")
        u = u_new
        if change <= cfg.tol:
            converged = True
            break
    # closing c-transform
    f = eps * _softmin_rows((log_a + u)[None, :] - K)
    cost = _primal_cost(Cs, log_a, log_a, f, f, eps)
    f_full = np.empty(a.shape[0])
    f_full[ra] = f
    if not ra.all():
        f_full[~ra] = eps * _softmin_rows(log_a[None, :] + (f[None, :] - C[np.ix_(~ra, ra)]) / eps)
    return SinkhornResult(f_full, f_full.copy(), converged, it, cost, eps, None, C, a, a)


def entropic_ot(mu_x, mu_y, cfg):
    C = cost_matrix(mu_x.points, mu_y.points, cfg.p)
    return sinkhorn(C, mu_x.weights, mu_y.weights, cfg)


def _cost_grad(X, Y, P, p):
    """``G_i = sum_j P_ij grad_x c(x_i, y_j)``."""
    if p == 2:
        return 2.0 * (X * P.sum(axis=1)[:, None] - P @ Y)
    diff = X[:, None, :] - Y[None, :, :]
    norm = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    W = np.divide(P, norm, out=np.zeros_like(P), where=norm > 0)
    return X * W.sum(axis=1)[:, None] - W @ Y


def _require(result, what):
    if not result.converged:
        raise ConvergenceError(f"Sinkhorn solve for {what} did not converge "
                               f"in {result.n_iter} iterations")


def entropic_value_and_grad(mu_x, mu_y, cfg):
    """``W_eps(mu_x, mu_y)`` and its envelope gradient in the atoms of ``mu_x``."""
    res = entropic_ot(mu_x, mu_y, cfg)
    _require(res, "W(x, y)")
    return res.cost, _cost_grad(mu_x.points, mu_y.points, res.plan(), cfg.p)


def _self_term(mu, cfg):
    C = cost_matrix(mu.points, mu.points, cfg.p)
    return sinkhorn_symmetric(C, mu.weights, cfg)


def _cross_term(mu_x, mu_y, cfg):
    # the averaged scheme matches the self-term iteration, so equal inputs
    # give equal costs and the divergence vanishes on the diagonal
    return entropic_ot(mu_x, mu_y, replace(cfg, scheme="averaged"))


def sinkhorn_divergence(mu_x, mu_y, cfg):
    """``2 W(x, y) - W(x, x) - W(y, y)`` with a shared configuration.

    All three terms use averaged updates whatever ``cfg.scheme`` says.
    """
    xy = _cross_term(mu_x, mu_y, cfg)
    xx = _self_term(mu_x, cfg)
    yy = _self_term(mu_y, cfg)
    return 2.0 * xy.cost - xx.cost - yy.cost


def sw_value_and_grad(mu_x, mu_y, cfg, self_y=None):
    """Sinkhorn divergence and its envelope gradient in the atoms of ``mu_x``.

    Plans are held fixed at their optima. The self term contributes through
    both of its arguments, which doubles its one-sided gradient. Pass a
    precomputed ``W(y, y)`` cost as ``self_y`` to skip that solve; it does
    not enter the gradient.
    """
    xy = _cross_term(mu_x, mu_y, cfg)
    _require(xy, "W(x, y)")
    xx = _self_term(mu_x, cfg)
    _require(xx, "W(x, x)")
    if self_y is None:
        yy = _self_term(mu_y, cfg)
        _require(yy, "W(y, y)")
        self_y = yy.cost
    X = mu_x.points
    grad = (2.0 * _cost_grad(X, mu_y.points, xy.plan(), cfg.p)
            - 2.0 * _cost_grad(X, X, xx.plan(), cfg.p))
    return 2.0 * xy.cost - xx.cost - self_y, grad


def sw_split_value_and_grad(mu_x, mu_x2, mu_y, mu_y2, cfg):
    """Sinkhorn divergence with its self terms taken across independent batches.

    Returns ``2 W(x, y) - W(x, x2) - W(y, y2)`` and its envelope gradients in
    the atoms of ``mu_x`` and ``mu_x2``. When all four batches are iid draws
    of one law the value has zero mean, which removes the small-batch pull
    toward shrunken fits that the same-batch self term leaves in place.
    """
    xy = _cross_term(mu_x, mu_y, cfg)
    _require(xy, "W(x, y)")
    xx = _cross_term(mu_x, mu_x2, cfg)
    _require(xx, "W(x, x2)")
    yy = _cross_term(mu_y, mu_y2, cfg)
    _require(yy, "W(y, y2)")
    X, X2 = mu_x.points, mu_x2.points
    P = xx.plan()
    grad_x = 2.0 * _cost_grad(X, mu_y.points, xy.plan(), cfg.p) - _cost_grad(X, X2, P, cfg.p)
    grad_x2 = -_cost_grad(X2, X, P.T, cfg.p)
    return 2.0 * xy.cost - xx.cost - yy.cost, grad_x, grad_x2


def sw_grad_points(mu_x, mu_y, cfg):
    return sw_value_and_grad(mu_x, mu_y, cfg)[1]
