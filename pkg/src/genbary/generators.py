"""Parametric push-forward models with hand-written reverse mode.

Every generator keeps its parameters in one flat vector. ``forward`` draws
latent codes, maps them to points and returns a :class:`Tape`;
``backward`` turns gradients on the output points into a gradient on the
flat parameter vector.
"""

import json

import numpy as np

from . import _mlp
from .exceptions import InvalidInputError, ParseError, TapeError
from .measures import DiscreteMeasure, as_rng

CHECKPOINT_MAGIC = "genbary-checkpoint 1"


class Tape:
    """Record of one forward pass, consumed by exactly one backward call."""

    __slots__ = ("owner", "latent", "cache", "used")

    def __init__(self, owner, latent, cache=None):
        self.owner = owner
        self.latent = latent
        self.cache = cache
        self.used = False


class Generator:
    """Base class. Subclasses define the latent law and the map."""

    kind = None

    def __init__(self, dim, theta):
        self.dim = int(dim)
        self._theta = np.array(theta, dtype=float)

    @property
    def n_params(self):
        return self._theta.shape[0]

    def get_params(self):
        return self._theta.copy()

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self._theta.shape:
            raise InvalidInputError(
                f"expected {self._theta.shape[0]} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("parameters must be finite")
        self._validate(theta)
        self._theta = theta.copy()

    def _validate(self, theta):
        pass

    def sample_latent(self, j, rng):
        raise NotImplementedError

    def push(self, latent):
        raise NotImplementedError

    def _backward(self, tape, grad_out):
        raise NotImplementedError

    def forward(self, j, rng):
        if j < 1:
            raise InvalidInputError("batch size must be >= 1")
        return self.push(self.sample_latent(j, as_rng(rng)))

    def backward(self, tape, grad_out):
        if tape.owner is not self:
            raise TapeError("tape was recorded by a different generator")
        if tape.used:
            raise TapeError("tape has already been consumed")
        grad_out = np.asarray(grad_out, dtype=float)
        if grad_out.shape != (tape.latent.shape[0], self.dim):
            raise TapeError(f"gradient shape {grad_out.shape} does not match the forward batch")
        tape.used = True
        return self._backward(tape, grad_out)

    def sample(self, n, rng):
        measure, _ = self.forward(n, rng)
        return measure

    def descriptor(self):
        return {"kind": self.kind, "dim": self.dim}

    def copy(self):
        other = from_descriptor(self.descriptor())
        other.set_params(self._theta)
        return other


class AffineGaussian(Generator):
    """``G(z) = A z + m`` with ``z ~ N(0, I_d)``; the covariance is ``A A^T``."""

    kind = "affine_gaussian"

    def __init__(self, dim, mean=None, root=None):
        mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)
        root = np.eye(dim) if root is None else np.asarray(root, dtype=float)
        if mean.shape != (dim,) or root.shape != (dim, dim):
            raise InvalidInputError("mean must be (d,) and root (d, d)")
        super().__init__(dim, np.concatenate([mean, root.ravel()]))

    @property
    def mean(self):
        return self._theta[:self.dim].copy()

    @property
    def root(self):
        return self._theta[self.dim:].reshape(self.dim, self.dim).copy()

    @property
    def covariance(self):
        A = self.root
        return A @ A.T

    def sample_latent(self, j, rng):
        return rng.generator.standard_normal((j, self.dim))

    def push(self, latent):
        X = latent @ self.root.T + self.mean
        return DiscreteMeasure(X), Tape(self, latent)

    def _backward(self, tape, G):
        return np.concatenate([G.sum(axis=0), (G.T @ tape.latent).ravel()])


class GaussianMixture(Generator):
    """Mixture of affine Gaussians with fixed component weights.

    Latent rows are ``[component index, z_1, ..., z_d]`` with the index
    drawn from ``Categorical(weights)``.
    """

    kind = "gaussian_mixture"

    def __init__(self, dim, weights, means=None, roots=None):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 1 or np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise InvalidInputError("mixture weights must lie on the simplex")
        k = weights.shape[0]
        means = np.zeros((k, dim)) if means is None else np.asarray(means, dtype=float)
        roots = np.broadcast_to(np.eye(dim), (k, dim, dim)) if roots is None else np.asarray(roots, dtype=float)
        if means.shape != (k, dim) or roots.shape != (k, dim, dim):
            raise InvalidInputError("need one (d,) mean and one (d, d) root per component")
        self.weights = weights
        theta = np.concatenate([np.concatenate([m, A.ravel()]) for m, A in zip(means, roots)])
        super().__init__(dim, theta)

    @classmethod
    def from_measures(cls, measures, weights, fit_covariance=True):
        """Components placed at the empirical mean (and covariance) of each measure."""
        dim = measures[0].dim
        means = np.array([m.mean() for m in measures])
        if fit_covariance:
            roots = np.array([np.linalg.cholesky(m.covariance() + 1e-12 * np.eye(dim))
                              for m in measures])
        else:
            roots = None
        return cls(dim, weights, means, roots)

    @property
    def n_components(self):
        return self.weights.shape[0]

    def _blocks(self):
        d = self.dim
        blocks = self._theta.reshape(self.n_components, d + d * d)
        return blocks[:, :d], blocks[:, d:].reshape(-1, d, d)

    @property
    def means(self):
        return self._blocks()[0].copy()

    @property
    def roots(self):
        return self._blocks()[1].copy()

    def sample_latent(self, j, rng):
        g = rng.generator
        comp = g.choice(self.n_components, size=j, p=self.weights)
        return np.column_stack([comp.astype(float), g.standard_normal((j, self.dim))])

    def push(self, latent):
        comp = latent[:, 0].astype(int)
        z = latent[:, 1:]
        means, roots = self._blocks()
        X = np.einsum("nij,nj->ni", roots[comp], z) + means[comp]
        return DiscreteMeasure(X), Tape(self, latent)

    def _backward(self, tape, G):
        comp = tape.latent[:, 0].astype(int)
        z = tape.latent[:, 1:]
        d = self.dim
        grad = np.zeros((self.n_components, d + d * d))
        np.add.at(grad[:, :d], comp, G)
        np.add.at(grad[:, d:], comp, np.einsum("ni,nj->nij", G, z).reshape(-1, d * d))
        return grad.ravel()

    def descriptor(self):
        return {"kind": self.kind, "dim": self.dim, "weights": self.weights.tolist()}


class Mlp(Generator):
    """ReLU MLP ``G(z)`` with ``z ~ N(0, I)``.

    Parameters
    ----------
    dim : int
        Output dimension.
    latent_dim : int
    hidden : sequence of int
        Hidden widths; defaults to (50, 200, 1000, 200).
    """

    kind = "mlp"

    def __init__(self, dim, latent_dim=2, hidden=(50, 200, 1000, 200), rng=None):
        self.latent_dim = int(latent_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.sizes = (self.latent_dim,) + self.hidden + (int(dim),)
        params = _mlp.init_params(self.sizes, as_rng(rng).generator)
        super().__init__(dim, _mlp.flatten(params))
        self._params = params

    def set_params(self, theta):
        super().set_params(theta)
        self._params = _mlp.unflatten(self._theta, self.sizes)

    def sample_latent(self, j, rng):
        return rng.generator.standard_normal((j, self.latent_dim))

    def push(self, latent):
        X, cache = _mlp.forward(self._params, latent)
        return DiscreteMeasure(X), Tape(self, latent, cache)

    def _backward(self, tape, G):
        grads, _ = _mlp.backward(self._params, tape.cache, G)
        return _mlp.flatten(grads)

    def preactivation_margin(self, latent):
        return _mlp.min_preactivation_margin(self._params, latent)

    def descriptor(self):
        return {"kind": self.kind, "dim": self.dim, "latent_dim": self.latent_dim,
                "hidden": list(self.hidden)}


class EllipsePair(Generator):
    """Two ellipses in the plane, each picked with probability 1/2.

    Parameters are ``[c1 (2), log axes1 (2), c2 (2), log axes2 (2)]``; latent
    rows are ``[angle, component]``.
    """

    kind = "ellipse_pair"

    def __init__(self, centers=None, axes=None, rng=None):
        if centers is None or axes is None:
            g = as_rng(rng).generator
            centers = g.standard_normal((2, 2)) if centers is None else centers
            log_axes = g.standard_normal((2, 2)) if axes is None else np.log(axes)
        else:
            log_axes = np.log(np.asarray(axes, dtype=float))
        centers = np.asarray(centers, dtype=float)
        log_axes = np.asarray(log_axes, dtype=float)
        if centers.shape != (2, 2) or log_axes.shape != (2, 2):
            raise InvalidInputError("need two 2-D centers and two axis pairs")
        theta = np.concatenate([centers[0], log_axes[0], centers[1], log_axes[1]])
        super().__init__(2, theta)

    def _split(self):
        t = self._theta.reshape(2, 4)
        return t[:, :2], np.exp(t[:, 2:])

    @property
    def centers(self):
        return self._split()[0].copy()

    @property
    def axes(self):
        return self._split()[1].copy()

    def sample_latent(self, j, rng):
        g = rng.generator
        angle = g.uniform(0.0, 2.0 * np.pi, size=j)
        comp = g.integers(0, 2, size=j)
        return np.column_stack([angle, comp.astype(float)])

    def push(self, latent):
        t = latent[:, 0]
        comp = latent[:, 1].astype(int)
        centers, axes = self._split()
        X = centers[comp] + axes[comp] * np.column_stack([np.cos(t), np.sin(t)])
        return DiscreteMeasure(X), Tape(self, latent)

    def _backward(self, tape, G):
        t = tape.latent[:, 0]
        comp = tape.latent[:, 1].astype(int)
        _, axes = self._split()
        # d x / d log a = a cos t, d y / d log b = b sin t
        scaled = G * axes[comp] * np.column_stack([np.cos(t), np.sin(t)])
        grad = np.zeros((2, 4))
        np.add.at(grad[:, :2], comp, G)
        np.add.at(grad[:, 2:], comp, scaled)
        return grad.ravel()

    def descriptor(self):
        return {"kind": self.kind, "dim": 2}


class ParticleCloud(Generator):
    """``K`` free atoms; the latent is a uniformly drawn atom index.

    With ``passthrough`` set, a batch of exactly ``K`` returns every atom
    once, in order.
    """

    kind = "particle_cloud"

    def __init__(self, atoms, passthrough=True):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if atoms.shape[0] < 1:
            raise InvalidInputError("particle cloud needs K >= 1 atoms")
        self.n_atoms = atoms.shape[0]
        self.passthrough = bool(passthrough)
        super().__init__(atoms.shape[1], atoms.ravel())

    @property
    def atoms(self):
        return self._theta.reshape(self.n_atoms, self.dim).copy()

    def sample_latent(self, j, rng):
        if self.passthrough and j == self.n_atoms:
            return np.arange(j, dtype=float)[:, None]
        return rng.generator.integers(0, self.n_atoms, size=j).astype(float)[:, None]

    def push(self, latent):
        idx = latent[:, 0].astype(int)
        return DiscreteMeasure(self.atoms[idx]), Tape(self, latent)

    def _backward(self, tape, G):
        grad = np.zeros((self.n_atoms, self.dim))
        np.add.at(grad, tape.latent[:, 0].astype(int), G)
        return grad.ravel()

    def descriptor(self):
        return {"kind": self.kind, "dim": self.dim, "n_atoms": self.n_atoms,
                "passthrough": self.passthrough}


def from_descriptor(desc):
    """Build a generator (with placeholder parameters) from its descriptor."""
    kind = desc.get("kind")
    dim = int(desc.get("dim", 2))
    if kind == AffineGaussian.kind:
        return AffineGaussian(dim)
    if kind == GaussianMixture.kind:
        return GaussianMixture(dim, desc["weights"])
    if kind == Mlp.kind:
        return Mlp(dim, desc["latent_dim"], desc["hidden"])
    if kind == EllipsePair.kind:
        return EllipsePair(np.zeros((2, 2)), np.ones((2, 2)))
    if kind == ParticleCloud.kind:
        return ParticleCloud(np.zeros((desc["n_atoms"], dim)), desc.get("passthrough", True))
    raise InvalidInputError(f"unknown generator kind {kind!r}")


def save_checkpoint(gen, path):
    """Write the magic line, a JSON descriptor line, then one parameter per line."""
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write(json.dumps(gen.descriptor(), sort_keys=True) + "\n")
        for v in gen.get_params():
            fh.write(repr(float(v)) + "\n")


def load_checkpoint(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ParseError("missing checkpoint header", line=1)
    try:
        desc = json.loads(lines[1])
    except (IndexError, json.JSONDecodeError):
        raise ParseError("bad model descriptor", line=2) from None
    gen = from_descriptor(desc)
    try:
        theta = np.array([float(s) for s in lines[2:] if s.strip()])
    except ValueError:
        raise ParseError("non-numeric parameter") from None
    gen.set_params(theta)
    return gen
