"""Experiment configuration files.

Configs are INI files with one section per concern. Unknown sections or keys
are rejected so typos surface as errors instead of silent defaults::

    [experiment]
    name = gauss15_sinkhorn
    seeds = 0, 1
    out = runs/gauss15

    [data]
    kind = gaussians
    n_measures = 5
    dim = 2
    n_per = 2000

    [generator]
    kind = affine, mlp

    [discrepancy]
    kind = sinkhorn
    epsilon = 0.01

    [optimizer]
    kind = adam
    lr = 0.05
    n_iter = 400
"""

import configparser
from dataclasses import dataclass, field

from .entropic_ot import SinkhornConfig
from .exceptions import InvalidInputError
from .solver import OptimizerSpec

DATA_KINDS = ("gaussians", "corners", "ellipses", "blobs", "csv")
GENERATOR_KINDS = ("affine", "mixture", "mlp", "ellipse", "particles")
DISCREPANCY_KINDS = ("sinkhorn", "entropic", "mmd", "smmd")

SCHEMA = {
    "experiment": {"name": str, "seeds": "ints", "out": str},
    "data": {"kind": str, "n_measures": int, "dim": int, "n_per": int, "weights": "floats",
             "seed": int, "side": float, "std": float, "centers": "points",
             "eig_range": "floats", "mean_range": "floats", "files": "strs"},
    "generator": {"kind": "strs", "latent_dim": int, "hidden": "ints", "n_atoms": int},
    "discrepancy": {"kind": str, "epsilon": float, "p": int, "tol": float, "max_iter": int,
                    "anneal": float, "lengthscale": float, "alpha": float,
                    "gp_coef": float, "n_critic": int, "critic_hidden": "ints",
                    "independent_batches": bool},
    "optimizer": {"kind": str, "lr": float, "beta1": float, "beta2": float, "decay": float,
                  "decay_every": int, "batch_size": int, "n_iter": int, "resample": bool},
    "output": {"n_samples": int, "timing": bool},
    "oracle": {"suites": "strs", "n_atoms": int, "n_measures": int, "candidates": int},
    "gradcheck": {"probes": int, "batch_size": int, "n_latent": int, "n_atoms": int},
    "eval": {"checkpoint": str, "n_samples": int},
}


class ConfigError(InvalidInputError):
    """A config file is unreadable or holds an invalid field."""

    def __init__(self, message, section=None, key=None):
        where = ""
        if section is not None:
            where = f"[{section}]" + (f" {key}" if key else "") + ": "
        super().__init__(where + message)
        self.section = section
        self.key = key


def _convert(kind, raw, section, key):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, float, str):
            return kind(raw.strip())
        parts = [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "ints":
            return [int(s) for s in parts]
        if kind == "floats":
            return [float(s) for s in parts]
        if kind == "strs":
            return parts
        if kind == "points":
            return [[float(v) for v in row.split()] for row in raw.split(";") if row.strip()]
    except ValueError:
        raise ConfigError(f"cannot read {raw!r}", section, key) from None
    raise AssertionError(kind)


@dataclass
class ExperimentConfig:
    """Parsed experiment: dataset, generators, discrepancy, optimizer, seeds, outputs."""

    name: str
    seeds: list
    out: str
    data: dict
    generators: list
    generator_opts: dict
    discrepancy: dict
    optimizer: OptimizerSpec
    output: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    gradcheck: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)


def _section(values, name):
    return dict(values.get(name, {}))


def _check(cond, message, section, key=None):
    if not cond:
        raise ConfigError(message, section, key)


def load_config(path):
    """Parse and validate the config at ``path``; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot open config: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message}") from None

    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError("unknown section", section)
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError("unknown key", section, key)
            values[section][key] = _convert(SCHEMA[section][key], raw, section, key)
    return build_config(values)


def build_config(values):
    exp = _section(values, "experiment")
    name = exp.get("name", "experiment")
    seeds = exp.get("seeds", [0])
    _check(len(seeds) >= 1, "at least one seed is required", "experiment", "seeds")
    out = exp.get("out", "runs/" + name)

    data = _section(values, "data")
    data.setdefault("kind", "gaussians")
    _check(data["kind"] in DATA_KINDS, f"expected one of {DATA_KINDS}", "data", "kind")
    for key in ("n_measures", "dim", "n_per"):
        if key in data:
            _check(data[key] >= 1, "must be >= 1", "data", key)
    if data["kind"] == "csv":
        _check(bool(data.get("files")), "csv data needs a files list", "data", "files")
    if data["kind"] == "blobs":
        _check(bool(data.get("centers")), "blob data needs centers", "data", "centers")
    if "weights" in data:
        w = data["weights"]
        _check(all(v >= 0 for v in w) and sum(w) > 0, "weights must be nonnegative, not all zero",
               "data", "weights")

    gen = _section(values, "generator")
    kinds = gen.pop("kind", ["affine"])
    _check(bool(kinds), "at least one generator kind is required", "generator", "kind")
    for k in kinds:
        _check(k in GENERATOR_KINDS, f"unknown generator {k!r}; expected one of {GENERATOR_KINDS}",
               "generator", "kind")
    if "hidden" in gen:
        _check(all(h >= 1 for h in gen["hidden"]), "hidden widths must be >= 1", "generator", "hidden")

    disc = _section(values, "discrepancy")
    disc.setdefault("kind", "sinkhorn")
    _check(disc["kind"] in DISCREPANCY_KINDS, f"expected one of {DISCREPANCY_KINDS}",
           "discrepancy", "kind")
    if disc["kind"] in ("sinkhorn", "entropic"):
        try:
            SinkhornConfig(disc.get("epsilon", 0.1), disc.get("p", 2), disc.get("max_iter", 5000),
                           disc.get("tol", 1e-3), disc.get("anneal", 0.5))
        except InvalidInputError as exc:
            raise ConfigError(str(exc), "discrepancy") from None
    for key in ("lengthscale", "alpha"):
        if key in disc:
            _check(disc[key] > 0, "must be > 0", "discrepancy", key)

    opt = _section(values, "optimizer")
    _check(opt.get("lr", 1e-2) > 0, "learning rate must be > 0", "optimizer", "lr")
    try:
        spec = OptimizerSpec(**opt)
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError(str(exc), "optimizer") from None

    output = {"n_samples": 1000, "timing": False}
    output.update(_section(values, "output"))
    _check(output["n_samples"] >= 1, "must be >= 1", "output", "n_samples")

    return ExperimentConfig(name, seeds, out, data, kinds, gen, disc, spec, output,
                            _section(values, "oracle"), _section(values, "gradcheck"),
                            _section(values, "eval"))
