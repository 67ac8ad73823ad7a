"""Discrete measures, synthetic datasets, minibatch sampling and CSV I/O."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError, ParseError

_WEIGHT_TOL = 1e-12
_SYM_TOL = 1e-12
_PSD_TOL = 1e-10


class SeededRng:
    """Seeded random stream.

    All randomness in the package is drawn from one of these. ``spawn``
    derives an independent child stream, so parallel samplers never share
    state.

    Parameters
    ----------
    seed : int
        64-bit seed.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))
        self.stream_counter = 0

    def spawn(self):
        child_seq = np.random.SeedSequence(
            self.seed, spawn_key=(self.stream_counter,))
        self.stream_counter += 1
        child = SeededRng.__new__(SeededRng)
        child.seed = self.seed
        child._seq = child_seq
        child.generator = np.random.Generator(np.random.PCG64(child_seq))
        child.stream_counter = 0
        return child

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream_counter={self.stream_counter})"


def as_rng(rng):
    """Coerce ``None``, an int, or a :class:`SeededRng` into a :class:`SeededRng`."""
    if isinstance(rng, SeededRng):
        return rng
    if rng is None:
        return SeededRng(0)
    if isinstance(rng, (int, np.integer)):
        return SeededRng(int(rng))
    raise InvalidInputError(f"cannot build a SeededRng from {type(rng).__name__}")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted sum of Diracs in R^d.

    Parameters
    ----------
    points : array-like, shape (N, d)
    weights : array-like, shape (N,), optional
        Must lie on the simplex; uniform when omitted.
    """

    points: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidInputError(f"points must be an N x d array with N, d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("points contain non-finite coordinates")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.array(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != pts.shape[0]:
                raise InvalidInputError(f"{w.shape[0]} weights for {pts.shape[0]} points")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise InvalidInputError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise InvalidInputError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def from_unnormalized(cls, points, weights):
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise InvalidInputError("weights must have a positive finite sum")
        w = w / total
        # absorb the last rounding ulp so the simplex check is exact
        w[np.argmax(w)] += 1.0 - w.sum()
        return cls(points, w)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self):
        return self.weights @ self.points

    def covariance(self):
        centered = self.points - self.mean()
        return (centered * self.weights[:, None]).T @ centered

    def __len__(self):
        return self.n


def mixture(measures, beta):
    """Weighted concatenation ``sum_p beta_p mu_p`` as one discrete measure."""
    beta = np.asarray(beta, dtype=float)
    if len(measures) != beta.shape[0]:
        raise InvalidInputError("one weight per measure is required")
    points = np.concatenate([m.points for m in measures])
    weights = np.concatenate([b * m.weights for b, m in zip(beta, measures)])
    return DiscreteMeasure.from_unnormalized(points, weights)


@dataclass(frozen=True)
class GaussianSpec:
    """Mean and covariance of a Gaussian in R^d."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.array(self.mean, dtype=float))
        S = np.atleast_2d(np.array(self.covariance, dtype=float))
        if m.ndim != 1 or S.shape != (m.shape[0], m.shape[0]):
            raise InvalidInputError(f"mean {m.shape} and covariance {S.shape} disagree")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(S))):
            raise InvalidInputError("Gaussian parameters must be finite")
        if np.max(np.abs(S - S.T), initial=0.0) > _SYM_TOL:
            raise InvalidInputError("covariance is not symmetric")
        if np.linalg.eigvalsh(S).min() < -_PSD_TOL:
            raise InvalidInputError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "covariance", _frozen(S))

    @property
    def dim(self):
        return self.mean.shape[0]

    def sqrt_covariance(self):
        vals, vecs = np.linalg.eigh(self.covariance)
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def sample_gaussian(spec, n, rng):
    """Draw ``n`` i.i.d. points of ``spec`` as a uniform-weight measure."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if not isinstance(spec, GaussianSpec):
        spec = GaussianSpec(*spec)
    rng = as_rng(rng)
    z = rng.generator.standard_normal((n, spec.dim))
    return DiscreteMeasure(z @ spec.sqrt_covariance() + spec.mean)


def random_gaussian_specs(p, dim, rng, mean_range=(0.5, 1.5), eig_range=(0.05, 0.2)):
    """Random Gaussians with means uniform in a box and random-rotation covariances."""
    rng = as_rng(rng)
    g = rng.generator
    specs = []
    for _ in range(p):
        mean = g.uniform(*mean_range, size=dim)
        q, r = np.linalg.qr(g.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))
        eig = g.uniform(*eig_range, size=dim)
        cov = (q * eig) @ q.T
        specs.append(GaussianSpec(mean, 0.5 * (cov + cov.T)))
    return specs


def corner_gaussian_specs(side=1.0, std=0.1):
    """Four isotropic Gaussians on the corners of a square centred at the origin.

    Order: top-left, top-right, bottom-left, bottom-right.
    """
    h = side / 2.0
    corners = [(-h, h), (h, h), (-h, -h), (h, -h)]
    return [GaussianSpec(np.array(c), std ** 2 * np.eye(2)) for c in corners]


@dataclass(frozen=True)
class EllipseParams:
    center: tuple
    outer_axes: tuple
    inner_axes: tuple


def make_nested_ellipses(p, n_per, rng, return_params=False):
    """Measures supported on pairs of concentric ellipses.

    Each measure puts ``n_per / 2`` uniform-weight atoms on an outer ellipse
    and as many on an inner one, at uniformly drawn angles.
    """
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    if n_per < 2 or n_per % 2:
        raise InvalidInputError("n_per must be an even count >= 2")
    g = as_rng(rng).generator
    half = n_per // 2
    measures, params = [], []
    for _ in range(p):
        c = g.uniform(-0.5, 0.5, size=2)
        outer = g.uniform(0.8, 1.2, size=2)
        inner = outer * g.uniform(0.4, 0.6)
        pts = []
        for axes in (outer, inner):
            t = g.uniform(0.0, 2.0 * np.pi, size=half)
            pts.append(c + np.column_stack([axes[0] * np.cos(t), axes[1] * np.sin(t)]))
        measures.append(DiscreteMeasure(np.concatenate(pts)))
        params.append(EllipseParams(tuple(c), tuple(outer), tuple(inner)))
    if return_params:
        return measures, params
    return measures


def make_blobs(centers, std, n_per, rng):
    """Isotropic Gaussian blobs, one uniform measure per center."""
    rng = as_rng(rng)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    d = centers.shape[1]
    return [sample_gaussian(GaussianSpec(c, std ** 2 * np.eye(d)), n_per, rng)
            for c in centers]


def subsample(mu, j, rng, replace=True):
    """Minibatch of ``j`` atoms drawn according to the weights of ``mu``.

    The minibatch carries uniform weights ``1/j``. Without replacement,
    ``j`` must not exceed the number of atoms with positive weight.
    """
    if j < 1:
        raise InvalidInputError("minibatch size must be >= 1")
    if not replace and j > np.count_nonzero(mu.weights):
        raise InvalidInputError("cannot draw more atoms than the support holds without replacement")
    g = as_rng(rng).generator
    idx = g.choice(mu.n, size=j, replace=replace, p=mu.weights)
    return DiscreteMeasure(mu.points[idx])


def save_csv(mu, path):
    """Write ``mu`` with header ``x0,...,x{d-1},w``."""
    header = [f"x{i}" for i in range(mu.dim)] + ["w"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, w in zip(mu.points, mu.weights):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(w))])


def load_csv(path):
    """Read a point cloud written by :func:`save_csv` or a plain numeric CSV.

    A header row is optional; a final column named ``w`` holds weights,
    which are renormalized. Without it the weights are uniform.
    """
    rows = []
    has_weights = False
    width = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            cells = [c.strip() for c in raw]
            if lineno == 1 and not _is_number(cells[0]):
                expected = [f"x{i}" for i in range(len(cells))]
                if cells[-1] == "w":
                    has_weights = True
                    expected = [f"x{i}" for i in range(len(cells) - 1)] + ["w"]
                if cells != expected:
                    raise ParseError(f"unrecognised header {cells}", line=lineno)
                width = len(cells)
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ParseError(f"expected {width} fields, found {len(cells)}", line=lineno)
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise ParseError(f"non-numeric field in {cells}", line=lineno) from None
            if not all(np.isfinite(values)):
                raise ParseError("non-finite value", line=lineno)
            rows.append(values)
    if not rows:
        raise ParseError("file holds no data rows", line=1)
    data = np.array(rows)
    if has_weights:
        if data.shape[1] < 2:
            raise ParseError("weight column without coordinates", line=1)
        return DiscreteMeasure.from_unnormalized(data[:, :-1], data[:, -1])
    return DiscreteMeasure(data)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
