"""Command line entry point: ``genbary {datagen,fit,oracle,gradcheck,eval}``.

Exit codes: 0 success, 2 config or input error, 3 run failure.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .entropic_ot import SinkhornConfig, sw_value_and_grad
from .estimator import make_discrepancy, make_generator
from .exceptions import (ConvergenceError, InvalidInputError, NumericalError, ParseError,
                         RunFailedError)
from .generators import ParticleCloud, load_checkpoint, save_checkpoint
from .kernels import FeatureMap, mmd2, mmd2_grad_points, rational_quadratic
from .measures import (DiscreteMeasure, GaussianSpec, SeededRng, corner_gaussian_specs,
                       load_csv, make_blobs, make_nested_ellipses, mixture,
                       random_gaussian_specs, sample_gaussian, save_csv, subsample)
from .oracles import (exact_ot_uniform, finite_difference_grad, gaussian_w2_barycenter,
                      gaussian_w2_squared, mmd_mixture_objective, multimarginal_bruteforce)
from .solver import (BarycenterProblem, adversarial_fit, fit, full_batch_loss,
                     gradient_quality, write_trace)
from .svg import write_scatter

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 2, 3
REPORT_HEADER = ["suite", "check", "value", "margin", "passed"]

log = logging.getLogger("genbary")


class ReportFailure(Exception):
    """One or more report checks did not pass."""


# -- data and model construction -------------------------------------------

def build_measures(cfg):
    """Input measures, weights and (for Gaussian data) the generating specs."""
    d = cfg.data
    rng = SeededRng(d.get("seed", 0))
    kind = d["kind"]
    P = d.get("n_measures", 5)
    n_per = d.get("n_per", 1000)
    specs = None
    if kind == "gaussians":
        extra = {k: tuple(d[k]) for k in ("eig_range", "mean_range") if k in d}
        specs = random_gaussian_specs(P, d.get("dim", 2), rng, **extra)
        measures = [sample_gaussian(s, n_per, rng) for s in specs]
    elif kind == "corners":
        specs = corner_gaussian_specs(d.get("side", 1.0), d.get("std", 0.1))
        measures = [sample_gaussian(s, n_per, rng) for s in specs]
    elif kind == "ellipses":
        measures = make_nested_ellipses(P, n_per, rng)
    elif kind == "blobs":
        measures = make_blobs(d["centers"], d.get("std", 0.1), n_per, rng)
    else:
        measures = [load_csv(f) for f in d["files"]]
    beta = d.get("weights")
    if beta is None:
        beta = np.full(len(measures), 1.0 / len(measures))
    else:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (len(measures),):
            raise ConfigError(f"expected {len(measures)} weights", "data", "weights")
        beta = beta / beta.sum()
    return measures, beta, specs


def build_problem(cfg, measures, beta):
    disc = dict(cfg.discrepancy)
    kind = disc.pop("kind")
    disc.pop("critic_hidden", None)
    return BarycenterProblem(measures, beta, make_discrepancy(kind, **disc))


def build_generator(kind, cfg, measures, beta, rng):
    opts = cfg.generator_opts
    dim = measures[0].dim
    if kind == "particles":
        k = opts.get("n_atoms", measures[0].n)
        return ParticleCloud(subsample(mixture(measures, beta), k, rng).points)
    hidden = opts.get("hidden", (50, 200, 1000, 200))
    return make_generator(kind, dim, measures, beta, opts.get("latent_dim", 2), hidden, rng)


def _run_dir(out, kind, seed):
    path = os.path.join(out, kind, f"seed{seed}")
    os.makedirs(path, exist_ok=True)
    return path


# -- subcommands -------------------------------------------------------------

def cmd_datagen(cfg, args):
    measures, beta, _ = build_measures(cfg)
    path = os.path.join(cfg.out, "data")
    os.makedirs(path, exist_ok=True)
    for p, mu in enumerate(measures):
        save_csv(mu, os.path.join(path, f"measure_{p:02d}.csv"))
    with open(os.path.join(path, "weights.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["measure", "beta"])
        for p, b in enumerate(beta):
            w.writerow([p, repr(float(b))])
    log.info("wrote %d measures to %s", len(measures), path)


def cmd_fit(cfg, args):
    measures, beta, _ = build_measures(cfg)
    problem = build_problem(cfg, measures, beta)
    smmd = bool(problem.smmd_terms())
    hidden = cfg.discrepancy.get("critic_hidden", [16, 16])
    for kind in cfg.generators:
        for seed in cfg.seeds:
            rng = SeededRng(seed)
            gen = build_generator(kind, cfg, measures, beta, rng)
            if smmd:
                critics = [FeatureMap((problem.dim, *hidden), rng=rng) for _ in measures]
                gen, _, diag = adversarial_fit(problem, gen, critics, cfg.optimizer, rng)
            else:
                gen, diag = fit(problem, gen, cfg.optimizer, rng)
            path = _run_dir(cfg.out, kind, seed)
            write_trace(diag, os.path.join(path, "trace.csv"), timing=cfg.output["timing"])
            samples = gen.sample(cfg.output["n_samples"], rng)
            save_csv(samples, os.path.join(path, "samples.csv"))
            save_checkpoint(gen, os.path.join(path, "checkpoint.txt"))
            write_scatter(os.path.join(path, "scatter.svg"), [m.points for m in measures],
                          samples.points, title=f"{cfg.name} {kind} seed {seed}")
            log.info("%s seed %d: final smoothed loss %.6g, %d aborted steps -> %s",
                     kind, seed, diag.smoothed_loss[-1], sum(diag.aborted), path)


def cmd_eval(cfg, args):
    ckpt = args.checkpoint or cfg.eval.get("checkpoint")
    if not ckpt:
        raise ConfigError("no checkpoint given (use --checkpoint)", "eval", "checkpoint")
    gen = load_checkpoint(ckpt)
    measures, beta, specs = build_measures(cfg)
    if gen.dim != measures[0].dim:
        raise InvalidInputError("checkpoint dimension does not match the data")
    problem = build_problem(cfg, measures, beta)
    if problem.smmd_terms():
        raise ConfigError("eval needs a critic-free discrepancy", "discrepancy", "kind")
    seed = cfg.seeds[0]
    latent = gen.sample_latent(cfg.eval.get("n_samples", 1000), SeededRng(seed))
    rows = [("loss", full_batch_loss(problem, gen, latent))]
    batch, _ = gen.push(latent)
    if specs is not None and cfg.data["kind"] == "gaussians":
        ref = gaussian_w2_barycenter(specs, beta)
        rows.append(("mean_rel_error", float(np.linalg.norm(batch.mean() - ref.mean)
                                             / np.linalg.norm(ref.mean))))
        rows.append(("cov_rel_error", float(np.linalg.norm(batch.covariance() - ref.covariance)
                                            / np.linalg.norm(ref.covariance))))
        if hasattr(gen, "covariance"):
            rows.append(("param_cov_rel_error",
                         float(np.linalg.norm(gen.covariance - ref.covariance)
                               / np.linalg.norm(ref.covariance))))
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "eval.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in rows:
            w.writerow([name, repr(float(value))])
    for name, value in rows:
        log.info("%s = %.6g", name, value)


def _write_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for suite, check, value, margin, ok in rows:
            w.writerow([suite, check, repr(float(value)), repr(float(margin)), "pass" if ok else "fail"])
    for suite, check, value, margin, ok in rows:
        log.info("%-9s %-34s %s  margin %.3g", suite, check, "pass" if ok else "FAIL", margin)
    if not all(r[4] for r in rows):
        raise ReportFailure(f"{sum(not r[4] for r in rows)} checks failed, see {path}")


def _uniform_clouds(rng, P, n, d, scale=1.0):
    g = rng.generator
    return [DiscreteMeasure(scale * g.standard_normal((n, d)) + g.uniform(-1, 1, size=d))
            for _ in range(P)]


def cmd_oracle(cfg, args):
    opts = cfg.oracle
    suites = opts.get("suites", ["prop1", "prop2", "gaussian", "assignment"])
    n = opts.get("n_atoms", 4)
    P = opts.get("n_measures", 2)
    rng = SeededRng(cfg.seeds[0])
    rows = []
    for suite in suites:
        if suite == "prop1":
            if n > 6 or P > 3:
                raise ConfigError("brute-force coupling limited to n_atoms <= 6, n_measures <= 3",
                                  "oracle")
            for trial in range(3):
                ms = _uniform_clouds(rng, P, n, 2)
                beta = rng.generator.dirichlet(np.ones(P))
                res = multimarginal_bruteforce(ms, beta)
                moments = sum(b * np.mean(np.sum(m.points ** 2, axis=1)) for b, m in zip(beta, ms))
                gap = abs(res.value - (moments - res.max_value))
                rows.append(("prop1", f"min_max_identity_{trial}", gap, 1e-9 - gap, gap <= 1e-9))
                same = res.assignment == res.max_assignment
                rows.append(("prop1", f"min_max_coupling_{trial}", float(same), float(same), same))
        elif suite == "prop2":
            k = rational_quadratic(2.0)
            ms = _uniform_clouds(rng, P, n, 2)
            beta = rng.generator.dirichlet(np.ones(P))
            best, _ = mmd_mixture_objective(ms, beta, k)
            worst = np.inf
            for _ in range(opts.get("candidates", 20)):
                other = rng.generator.dirichlet(np.ones(P))
                cand = mixture(ms, other) if rng.generator.uniform() < 0.5 else \
                    _uniform_clouds(rng, 1, n, 2)[0]
                worst = min(worst, mmd_mixture_objective(ms, beta, k, cand)[0] - best)
            rows.append(("prop2", "mixture_minimizes_F", best, worst, worst >= -1e-12))
        elif suite == "gaussian":
            g = rng.generator
            for trial in range(3):
                m = g.uniform(-1, 1, size=P)
                s = g.uniform(0.2, 1.5, size=P)
                beta = g.dirichlet(np.ones(P))
                specs = [GaussianSpec([mi], [[si ** 2]]) for mi, si in zip(m, s)]
                bar = gaussian_w2_barycenter(specs, beta)
                err = abs(np.sqrt(bar.covariance[0, 0]) - beta @ s) + abs(bar.mean[0] - beta @ m)
                rows.append(("gaussian", f"1d_closed_form_{trial}", err, 1e-9 - err, err <= 1e-9))
                w2 = gaussian_w2_squared(specs[0], specs[1 % P])
                brute = (m[0] - m[1 % P]) ** 2 + (s[0] - s[1 % P]) ** 2
                rows.append(("gaussian", f"1d_w2_formula_{trial}", abs(w2 - brute),
                             1e-9 - abs(w2 - brute), abs(w2 - brute) <= 1e-9))
        elif suite == "assignment":
            for trial in range(3):
                X, Y = (m.points for m in _uniform_clouds(rng, 2, min(n, 8), 2))
                a, _ = exact_ot_uniform(X, Y, 2, "enumerate")
                b, _ = exact_ot_uniform(X, Y, 2, "hungarian")
                rows.append(("assignment", f"enumerate_vs_hungarian_{trial}", abs(a - b),
                             1e-12 - abs(a - b), abs(a - b) <= 1e-12))
        else:
            raise ConfigError(f"unknown oracle suite {suite!r}", "oracle", "suites")
    os.makedirs(cfg.out, exist_ok=True)
    _write_report(os.path.join(cfg.out, "oracle_report.csv"), rows)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def cmd_gradcheck(cfg, args):
    opts = cfg.gradcheck
    rng = SeededRng(cfg.seeds[0])
    g = rng.generator
    rows = []

    # kernel MMD: point gradients against central differences
    k = rational_quadratic(2.0)
    worst = 0.0
    for _ in range(5):
        X, Y = g.standard_normal((6, 2)), g.standard_normal((5, 2)) + 0.5
        mu_y = DiscreteMeasure(Y)
        analytic = mmd2_grad_points(k, DiscreteMeasure(X), mu_y)
        fd = finite_difference_grad(
            lambda v: mmd2(k, DiscreteMeasure(v.reshape(X.shape)), mu_y),
            X.ravel()).reshape(X.shape)
        worst = max(worst, _rel(analytic, fd))
    rows.append(("mmd", "max_relative_error", worst, 1e-5 - worst, worst <= 1e-5))

    # Sinkhorn divergence envelope gradients, tight inner tolerance
    sk = SinkhornConfig(0.1, tol=1e-9, max_iter=100000)
    worst = 0.0
    for _ in range(5):
        X, Y = g.uniform(size=(5, 2)), g.uniform(size=(5, 2))
        mu_y = DiscreteMeasure(Y)
        _, analytic = sw_value_and_grad(DiscreteMeasure(X), mu_y, sk)
        fd = finite_difference_grad(
            lambda v: sw_value_and_grad(DiscreteMeasure(v.reshape(X.shape)), mu_y, sk)[0],
            X.ravel()).reshape(X.shape)
        worst = max(worst, _rel(analytic, fd))
    rows.append(("sinkhorn", "max_relative_error", worst, 1e-3 - worst, worst <= 1e-3))

    # bias and variance of the barycentric gradient on a small instance
    measures, beta, _ = build_measures(cfg)
    n_atoms = opts.get("n_atoms", 32)
    small = [subsample(m, min(n_atoms, m.n), rng, replace=False) for m in measures]
    problem = build_problem(cfg, small, beta)
    if problem.smmd_terms():
        raise ConfigError("gradcheck needs a critic-free discrepancy", "discrepancy", "kind")
    kind = cfg.generators[0]
    gen = build_generator(kind, cfg, small, beta, rng)
    if kind == "mlp":
        raise ConfigError("gradcheck uses a structural generator, not the mlp", "generator", "kind")
    J = opts.get("batch_size", 8)
    probes = opts.get("probes", 200)
    latent = gen.sample_latent(opts.get("n_latent", 32), rng)
    q1 = gradient_quality(problem, gen, probes, rng, batch_size=J, latent=latent)
    q2 = gradient_quality(problem, gen, probes, rng, batch_size=2 * J, latent=latent)
    rel_delta = q1.delta / max(q1.grad_norm, 1e-300)
    tol_delta = 1e-3 if cfg.discrepancy["kind"] in ("sinkhorn", "entropic") else 1e-6
    rows.append(("quality", "delta_over_grad_norm", rel_delta, tol_delta - rel_delta,
                 rel_delta <= tol_delta))
    rows.append(("quality", f"sigma2_batch{J}", q1.sigma2, q1.sigma2, True))
    ratio = q2.sigma2 / q1.sigma2
    rows.append(("quality", "sigma2_ratio_batch_doubling", ratio,
                 min(ratio - 0.3, 0.7 - ratio), 0.3 <= ratio <= 0.7))
    os.makedirs(cfg.out, exist_ok=True)
    _write_report(os.path.join(cfg.out, "gradcheck_report.csv"), rows)


COMMANDS = {"datagen": cmd_datagen, "fit": cmd_fit, "eval": cmd_eval,
            "oracle": cmd_oracle, "gradcheck": cmd_gradcheck}


def build_parser():
    parser = argparse.ArgumentParser(prog="genbary",
                                     description="Generative barycenter experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--seed", type=int, metavar="N", help="run with this seed only")
        p.add_argument("--out", metavar="DIR", help="override the output directory")
        p.add_argument("--quiet", action="store_true")
        if name == "eval":
            p.add_argument("--checkpoint", metavar="PATH")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        if args.out is not None:
            cfg.out = args.out
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidInputError, ParseError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (RunFailedError, NumericalError, ConvergenceError, ReportFailure) as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
