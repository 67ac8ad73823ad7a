"""Stochastic descent of the barycentric loss ``L(theta) = sum_p beta_p D_p(G_theta # rho, mu_p)``.

One step subsamples every input measure, draws fresh generator samples per
term, takes the gradient of each discrepancy with respect to the generated
points, chains it through the generator and combines the terms with the
barycentric weights.
"""

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .entropic_ot import (SinkhornConfig, entropic_value_and_grad, sinkhorn_divergence,
                          entropic_ot, sw_split_value_and_grad, sw_value_and_grad)
from .exceptions import (ConvergenceError, InvalidInputError, NumericalError,
                         RunFailedError)
from .kernels import (FeatureMap, SmmdConfig, feature_mmd2_grad_points, mmd2,
                      mmd2_arrays, rational_quadratic, smmd_critic_objective)
from .measures import DiscreteMeasure, as_rng, subsample
from .oracles import finite_difference_grad

EMA_FACTOR = 0.95
TRACE_HEADER = ["iteration", "loss", "grad_norm2", "lr", "wall_ms"]


# -- discrepancies ---------------------------------------------------------

@dataclass(frozen=True)
class MMD:
    """Squared MMD with a fixed kernel."""

    kernel: object = rational_quadratic(2.0)

    def value_and_grad(self, x, y, critic=None):
        v, g = mmd2_arrays(self.kernel, x.points, x.weights, y.points, y.weights, grad_x=True)
        return v, g

    def value(self, x, y, critic=None):
        return mmd2(self.kernel, x, y)


@dataclass(frozen=True)
class SinkhornDivergence:
    """Sinkhorn divergence between generated and target batches.

    With ``independent_batches`` set, stochastic steps draw a second
    generator batch and a second target batch and evaluate the self terms
    across them. This removes most of the shrinkage that small batches
    otherwise impose on the fit, at the cost of one extra generator pass.
    """

    config: SinkhornConfig = SinkhornConfig()
    independent_batches: bool = False

    def value_and_grad(self, x, y, critic=None):
        return sw_value_and_grad(x, y, self.config)

    def split_value_and_grad(self, x, x2, y, y2):
        return sw_split_value_and_grad(x, x2, y, y2, self.config)

    def value(self, x, y, critic=None):
        return sinkhorn_divergence(x, y, self.config)


@dataclass(frozen=True)
class EntropicOT:
    config: SinkhornConfig = SinkhornConfig()

    def value_and_grad(self, x, y, critic=None):
        return entropic_value_and_grad(x, y, self.config)

    def value(self, x, y, critic=None):
        return entropic_ot(x, y, self.config).cost


@dataclass(frozen=True)
class SMMD:
    """MMD^2 through a trained feature map; the critic is supplied per term."""

    config: SmmdConfig = SmmdConfig()

    def value_and_grad(self, x, y, critic=None):
        if critic is None:
            raise InvalidInputError("SMMD terms need a critic feature map")
        return feature_mmd2_grad_points(self.config.kernel, critic, x, y)

    def value(self, x, y, critic=None):
        if critic is None:
            raise InvalidInputError("SMMD terms need a critic feature map")
        fx, fy = critic(x.points), critic(y.points)
        return mmd2_arrays(self.config.kernel, fx, x.weights, fy, y.weights)


class BarycenterProblem:
    """Input measures, simplex weights and one discrepancy per measure.

    ``discrepancies`` may be a single spec, shared by every term.
    """

    def __init__(self, measures, beta=None, discrepancies=None):
        measures = list(measures)
        if not measures:
            raise InvalidInputError("at least one measure is required")
        if any(not isinstance(m, DiscreteMeasure) for m in measures):
            raise InvalidInputError("measures must be DiscreteMeasure instances")
        dims = {m.dim for m in measures}
        if len(dims) != 1:
            raise InvalidInputError(f"measures live in different dimensions: {sorted(dims)}")
        P = len(measures)
        beta = np.full(P, 1.0 / P) if beta is None else np.asarray(beta, dtype=float)
        if beta.shape != (P,) or np.any(beta < 0) or abs(beta.sum() - 1.0) > 1e-12:
            raise InvalidInputError("beta must be a probability vector with one entry per measure")
        if discrepancies is None:
            discrepancies = SinkhornDivergence()
        if not isinstance(discrepancies, (list, tuple)):
            discrepancies = [discrepancies] * P
        if len(discrepancies) != P:
            raise InvalidInputError("one discrepancy per measure is required")
        self.measures = measures
        self.beta = beta
        self.discrepancies = list(discrepancies)

    @property
    def dim(self):
        return self.measures[0].dim

    @property
    def n_measures(self):
        return len(self.measures)

    def smmd_terms(self):
        return [p for p, D in enumerate(self.discrepancies) if isinstance(D, SMMD)]


# -- optimizers ------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerSpec:
    """Update rule and schedule.

    The learning rate at step ``t`` is ``lr * decay ** (t // decay_every)``.
    With ``resample`` off each step uses the whole of every measure and
    ``batch_size`` generator draws.
    """

    kind: str = "adam"
    lr: float = 1e-2
    beta1: float = 0.5
    beta2: float = 0.99
    decay: float = 1.0
    decay_every: int = 1
    batch_size: int = 150
    n_iter: int = 1000
    resample: bool = True
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.kind!r}")
        if not self.lr >= 0:
            raise InvalidInputError("learning rate must be >= 0")
        if not 0 < self.decay <= 1:
            raise InvalidInputError("decay must lie in (0, 1]")
        if self.batch_size < 1 or self.n_iter < 1 or self.decay_every < 1:
            raise InvalidInputError("batch_size, n_iter and decay_every must be >= 1")

    def lr_at(self, t):
        return self.lr * self.decay ** (t // self.decay_every)

    def make_state(self, n_params):
        return OptimizerState(self, n_params)


class OptimizerState:
    def __init__(self, spec, n_params):
        self.spec = spec
        self.t = 0
        if spec.kind == "adam":
            self.m = np.zeros(n_params)
            self.v = np.zeros(n_params)

    @property
    def lr(self):
        return self.spec.lr_at(self.t)

    def direction(self, grad):
        """Descent direction for ``grad``; advances the moment estimates."""
        s = self.spec
        if s.kind == "sgd":
            return grad
        self.m = s.beta1 * self.m + (1 - s.beta1) * grad
        self.v = s.beta2 * self.v + (1 - s.beta2) * grad ** 2
        k = self.t + 1
        m_hat = self.m / (1 - s.beta1 ** k)
        v_hat = self.v / (1 - s.beta2 ** k)
        return m_hat / (np.sqrt(v_hat) + s.adam_eps)

    def update(self, theta, grad):
        lr = self.lr
        new = theta - lr * self.direction(grad)
        self.t += 1
        return new


# -- one step --------------------------------------------------------------

@dataclass
class StepRecord:
    loss: float
    grad_norm2: float
    lr: float
    wall_ms: float
    aborted: bool = False
    reason: str = ""
    term_losses: np.ndarray = None
    term_grads: list = field(default=None, repr=False)
    grad: np.ndarray = field(default=None, repr=False)


def _term_batches(problem, gen, opt, p, rng):
    mu = problem.measures[p]
    target = subsample(mu, opt.batch_size, rng) if opt.resample else mu
    batch, tape = gen.forward(opt.batch_size, rng)
    return target, batch, tape


def barycentric_gradient(problem, gen, opt, rng, critics=None):
    """Stochastic barycentric gradient ``sum_p beta_p g_p`` and per-term pieces.

    Terms with zero weight are skipped entirely and draw no randomness.
    """
    rng = as_rng(rng)
    if gen.dim != problem.dim:
        raise InvalidInputError(f"generator outputs {gen.dim}-D points, measures are {problem.dim}-D")
    total = np.zeros(gen.n_params)
    losses = np.zeros(problem.n_measures)
    grads = [None] * problem.n_measures
    for p, (D, b) in enumerate(zip(problem.discrepancies, problem.beta)):
        if b == 0:
            continue
        target, batch, tape = _term_batches(problem, gen, opt, p, rng)
        if getattr(D, "independent_batches", False):
            target2, batch2, tape2 = _term_batches(problem, gen, opt, p, rng)
            value, gx, gx2 = D.split_value_and_grad(batch, batch2, target, target2)
            g_p = gen.backward(tape, gx) + gen.backward(tape2, gx2)
        else:
            critic = critics[p] if critics is not None else None
            value, grad_points = D.value_and_grad(batch, target, critic)
            g_p = gen.backward(tape, grad_points)
        losses[p] = value
        grads[p] = g_p
        total += b * g_p
    return total, losses, grads


def barycentric_step(problem, gen, state, rng, critics=None):
    """Apply one optimizer update to ``gen`` and return its :class:`StepRecord`.

    A non-finite gradient or an unconverged inner Sinkhorn solve aborts the
    step and leaves the parameters untouched.
    """
    start = time.perf_counter()
    lr = state.lr
    try:
        grad, losses, grads = barycentric_gradient(problem, gen, state.spec, rng, critics)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite barycentric gradient")
    except (NumericalError, ConvergenceError) as exc:
        state.t += 1
        return StepRecord(np.nan, np.nan, lr, (time.perf_counter() - start) * 1e3,
                          aborted=True, reason=str(exc))
    gen.set_params(state.update(gen.get_params(), grad))
    loss = float(problem.beta @ losses)
    return StepRecord(loss, float(grad @ grad), lr, (time.perf_counter() - start) * 1e3,
                      term_losses=losses, term_grads=grads, grad=grad)


# -- diagnostics -----------------------------------------------------------

def ema(values, factor=EMA_FACTOR):
    """Exponential moving average that skips NaNs and starts at the first value."""
    out = np.empty(len(values))
    s = np.nan
    for i, v in enumerate(values):
        if np.isfinite(v):
            s = v if not np.isfinite(s) else factor * s + (1 - factor) * v
        out[i] = s
    return out


@dataclass
class Diagnostics:
    """Per-iteration traces of one run.

    ``smoothed_*`` are exponential moving averages with factor 0.95;
    ``running_min_grad_norm2`` is the running minimum of the smoothed
    squared gradient norm. ``delta`` and ``sigma2`` hold gradient bias and
    variance estimates when they were measured.
    """

    loss: list = field(default_factory=list)
    grad_norm2: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    aborted: list = field(default_factory=list)
    critic_objective: list = field(default_factory=list)
    delta: float = None
    sigma2: float = None

    def append(self, rec):
        self.loss.append(rec.loss)
        self.grad_norm2.append(rec.grad_norm2)
        self.lr.append(rec.lr)
        self.wall_ms.append(rec.wall_ms)
        self.aborted.append(rec.aborted)

    @property
    def n_iter(self):
        return len(self.loss)

    @property
    def smoothed_loss(self):
        return ema(self.loss)

    @property
    def smoothed_grad_norm2(self):
        return ema(self.grad_norm2)

    @property
    def running_min_grad_norm2(self):
        s = self.smoothed_grad_norm2
        return np.fmin.accumulate(np.where(np.isfinite(s), s, np.inf))

    @property
    def aborted_fraction(self):
        return float(np.mean(self.aborted)) if self.aborted else 0.0


def write_trace(diag, path, timing=True):
    """CSV with columns ``iteration, loss, grad_norm2, lr, wall_ms``.

    With ``timing`` off the ``wall_ms`` column is left empty so reruns are
    byte-identical.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for i in range(diag.n_iter):
            wall = repr(float(diag.wall_ms[i])) if timing else ""
            w.writerow([i, repr(float(diag.loss[i])), repr(float(diag.grad_norm2[i])),
                        repr(float(diag.lr[i])), wall])


def read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) if r[k] != "" else np.nan for r in rows])
            for k in TRACE_HEADER}


# -- training loops --------------------------------------------------------

def fit(problem, gen, opt, rng, callback=None):
    """Run ``opt.n_iter`` barycentric steps.

    Returns the generator (updated in place) and its :class:`Diagnostics`.
    Raises :class:`RunFailedError` when more than half the steps aborted.
    """
    rng = as_rng(rng)
    state = opt.make_state(gen.n_params)
    diag = Diagnostics()
    for t in range(opt.n_iter):
        rec = barycentric_step(problem, gen, state, rng)
        diag.append(rec)
        if callback is not None:
            callback(t, rec, gen)
    if diag.aborted_fraction > 0.5:
        err = RunFailedError(f"{sum(diag.aborted)} of {diag.n_iter} steps aborted")
        err.diagnostics = diag
        raise err
    return gen, diag


def adversarial_fit(problem, gen, critics, opt, rng, critic_opt=None,
                    freeze_critics=False, callback=None):
    """Alternate critic ascent and generator descent for SMMD terms.

    Each iteration runs ``n_critic`` ascent steps on every SMMD critic's
    objective (interpolation coefficients drawn uniformly per pair), then one
    generator step on the barycentric loss in feature space.

    Parameters
    ----------
    critics : list
        One :class:`FeatureMap` per measure; entries for non-SMMD terms are
        ignored and may be ``None``.
    critic_opt : OptimizerSpec, optional
        Critic update rule; Adam with ``lr=1e-3``, ``beta1=0.5``,
        ``beta2=0.99`` by default. Only ``kind``, ``lr``, the Adam constants
        and the decay schedule are used.
    """
    rng = as_rng(rng)
    critics = list(critics)
    if len(critics) != problem.n_measures:
        raise InvalidInputError("one critic slot per measure is required")
    terms = problem.smmd_terms()
    for p in terms:
        if not isinstance(critics[p], FeatureMap):
            raise InvalidInputError(f"SMMD term {p} has no critic")
        if critics[p].input_dim != problem.dim:
            raise InvalidInputError("critic input dimension does not match the measures")
    critic_opt = critic_opt or OptimizerSpec("adam", lr=1e-3)
    critic_states = {p: critic_opt.make_state(critics[p].get_params().size) for p in terms}
    state = opt.make_state(gen.n_params)
    diag = Diagnostics()
    for t in range(opt.n_iter):
        objectives = []
        if not freeze_critics:
            for p in terms:
                D = problem.discrepancies[p]
                psi = critics[p]
                for _ in range(D.config.n_critic):
                    target, batch, _ = _term_batches(problem, gen, opt, p, rng)
                    n_pairs = min(batch.n, target.n)
                    tmix = rng.generator.uniform(size=n_pairs)
                    obj, grad = smmd_critic_objective(D.config, psi, batch, target,
                                                      t=tmix, return_grad=True)
                    if not (np.isfinite(obj) and np.all(np.isfinite(grad))):
                        raise RunFailedError(f"critic {p} diverged at iteration {t}")
                    # ascent: step along +grad
                    psi.set_params(critic_states[p].update(psi.get_params(), -grad))
                    objectives.append(obj)
        rec = barycentric_step(problem, gen, state, rng, critics)
        diag.append(rec)
        diag.critic_objective.append(float(np.mean(objectives)) if objectives else np.nan)
        if callback is not None:
            callback(t, rec, gen)
    if diag.aborted_fraction > 0.5:
        err = RunFailedError(f"{sum(diag.aborted)} of {diag.n_iter} steps aborted")
        err.diagnostics = diag
        raise err
    return gen, critics, diag


# -- full-batch evaluation and gradient quality ----------------------------

def _tight(D, tol):
    if isinstance(D, (SinkhornDivergence, EntropicOT)):
        return replace(D, config=replace(D.config, tol=tol,
                                         max_iter=max(D.config.max_iter, 200000)))
    return D


def full_batch_loss(problem, gen, latent, critics=None, theta=None):
    """``L(theta)`` with the generator pushed through a fixed latent pool."""
    if theta is not None:
        gen = gen.copy()
        gen.set_params(theta)
    batch, _ = gen.push(latent)
    total = 0.0
    for p, (D, b, mu) in enumerate(zip(problem.discrepancies, problem.beta, problem.measures)):
        if b == 0:
            continue
        total += b * D.value(batch, mu, critics[p] if critics is not None else None)
    return float(total)


def full_batch_gradient(problem, gen, latent, critics=None):
    total = np.zeros(gen.n_params)
    for p, (D, b, mu) in enumerate(zip(problem.discrepancies, problem.beta, problem.measures)):
        if b == 0:
            continue
        batch, tape = gen.push(latent)
        _, gx = D.value_and_grad(batch, mu, critics[p] if critics is not None else None)
        total += b * gen.backward(tape, gx)
    return total


@dataclass
class GradientQuality:
    delta: float
    sigma2: float
    grad_full: np.ndarray
    grad_fd: np.ndarray
    batch_size: int

    @property
    def grad_norm(self):
        return float(np.linalg.norm(self.grad_fd))


def gradient_quality(problem, gen, probes, rng, batch_size=32, n_latent=128,
                     h=1e-5, inner_tol=1e-9, critics=None, latent=None):
    """Bias and variance of the stochastic barycentric gradient.

    The reference objective pushes a fixed pool of ``n_latent`` latent codes
    through the generator and compares with the full input measures.
    ``delta`` is the distance between the analytic full-batch gradient and
    central finite differences of that objective, with inner Sinkhorn
    solves run to ``inner_tol``. ``sigma2`` is the mean squared distance of
    ``probes`` minibatch gradients (batch size ``batch_size`` for both the
    measures and the latent pool) from the full-batch gradient; the probes
    use the problem's own inner tolerances.
    """
    rng = as_rng(rng)
    tight = BarycenterProblem(problem.measures, problem.beta,
                              [_tight(D, inner_tol) for D in problem.discrepancies])
    if latent is None:
        latent = gen.sample_latent(n_latent, rng)
    g_full = full_batch_gradient(tight, gen, latent, critics)
    theta0 = gen.get_params()
    g_fd = finite_difference_grad(
        lambda th: full_batch_loss(tight, gen, latent, critics, theta=th), theta0, h)
    delta = float(np.linalg.norm(g_full - g_fd))

    sq = []
    g = rng.generator
    for _ in range(probes):
        idx = g.integers(0, latent.shape[0], size=batch_size)
        total = np.zeros(gen.n_params)
        for p, (D, b, mu) in enumerate(zip(problem.discrepancies, problem.beta, problem.measures)):
            if b == 0:
                continue
            target = subsample(mu, batch_size, rng)
            batch, tape = gen.push(latent[idx])
            _, gx = D.value_and_grad(batch, target, critics[p] if critics is not None else None)
            total += b * gen.backward(tape, gx)
        sq.append(float(np.sum((total - g_full) ** 2)))
    return GradientQuality(delta, float(np.mean(sq)), g_full, g_fd, batch_size)


def curvature_proxy(problem, gen, latent, rng, n_dirs=4, h=1e-3, critics=None):
    """Largest ``||grad L(theta + h u) - grad L(theta)|| / h`` over random unit ``u``.

    Uses the full-batch objective on a fixed latent pool, so differences are
    free of sampling noise.
    """
    rng = as_rng(rng)
    theta = gen.get_params()
    g0 = full_batch_gradient(problem, gen, latent, critics)
    probe = gen.copy()
    best = 0.0
    for _ in range(n_dirs):
        u = rng.generator.standard_normal(theta.size)
        u /= np.linalg.norm(u)
        probe.set_params(theta + h * u)
        g1 = full_batch_gradient(problem, probe, latent, critics)
        best = max(best, float(np.linalg.norm(g1 - g0) / h))
    return best


@dataclass
class StationarityReport:
    """Measured stand-ins for the constants of the SGD stationarity bound."""

    regret: float
    curvature: float
    sigma2: float
    delta: float
    n_iter: int
    lr: float
    threshold: float
    final_running_min: float
    running_min_nonincreasing: bool
    trend_decreasing: bool

    @property
    def passed(self):
        return (self.running_min_nonincreasing and self.trend_decreasing
                and self.final_running_min <= 10.0 * self.threshold)


def stationarity_lr(regret, curvature, sigma2, n_iter):
    """``sqrt(2 Delta / (M sigma^2 T))`` capped at ``1 / M``."""
    lr = np.sqrt(2.0 * regret / (curvature * sigma2 * n_iter))
    return float(min(lr, 1.0 / curvature))


def stationarity_report(diag, regret, curvature, sigma2, delta, lr):
    """Compare the running minimum of the smoothed squared gradient norm with
    ``sqrt(8 Delta M sigma^2 / T) + delta^2``."""
    T = diag.n_iter
    threshold = float(np.sqrt(8.0 * regret * curvature * sigma2 / T) + delta ** 2)
    rm = diag.running_min_grad_norm2
    nonincreasing = bool(np.all(np.diff(rm) <= 0))
    trend = bool(rm[-1] < rm[max(T // 10 - 1, 0)])
    return StationarityReport(regret, curvature, sigma2, delta, T, lr, threshold,
                              float(rm[-1]), nonincreasing, trend)


def critic_identity_stack(problem):
    """Identity feature maps for every measure (turns SMMD into plain MMD)."""
    return [FeatureMap.identity(problem.dim) for _ in problem.measures]


__all__ = [
    "MMD", "SMMD", "SinkhornDivergence", "EntropicOT", "BarycenterProblem",
    "OptimizerSpec", "OptimizerState", "StepRecord", "Diagnostics",
    "barycentric_gradient", "barycentric_step", "fit", "adversarial_fit",
    "gradient_quality", "GradientQuality", "curvature_proxy",
    "stationarity_lr", "stationarity_report", "StationarityReport",
    "full_batch_loss", "full_batch_gradient", "write_trace", "read_trace", "ema",
]
