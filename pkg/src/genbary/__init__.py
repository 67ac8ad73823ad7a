"""Generative barycenters of probability measures.

A barycenter is represented by a push-forward model ``G_theta # rho`` and
fitted by stochastic gradient descent on ``sum_p beta_p D(G_theta # rho, mu_p)``
for Sinkhorn divergences, entropic OT, MMD and learned-kernel MMD.
"""

from .entropic_ot import (SinkhornConfig, SinkhornResult, sinkhorn,
                          sinkhorn_divergence, sw_grad_points, sw_value_and_grad)
from .estimator import GenerativeBarycenter
from .exceptions import (ConvergenceError, InvalidInputError, NumericalError, ParseError,
                         RunFailedError, TapeError)
from .generators import (AffineGaussian, EllipsePair, GaussianMixture, Mlp, ParticleCloud,
                         load_checkpoint, save_checkpoint)
from .kernels import RBF, FeatureMap, SmmdConfig, mmd2, rational_quadratic, rq_mixture
from .measures import DiscreteMeasure, GaussianSpec, SeededRng, load_csv, save_csv
from .solver import (MMD, SMMD, BarycenterProblem, EntropicOT, OptimizerSpec,
                     SinkhornDivergence, adversarial_fit, fit)

__version__ = "0.1.0"
