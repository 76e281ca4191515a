"""Bayesian nonparametric copula estimation with Bernstein polynomials of
yett-uniform (grid-uniform) copulas."""

from .bernstein import BernsteinCopula
from .centering import Gaussian, Independence, project_to_yett
from .marginals import MarginalModel
from .mcmc import RunConfig, Sampler, run
from .prior import PriorSpec, log_prior
from .proposals import ProposalKind
from .yett import YettCopula, independence

__all__ = [
    "BernsteinCopula", "Gaussian", "Independence", "project_to_yett", "MarginalModel",
    "RunConfig", "Sampler", "run", "PriorSpec", "log_prior", "ProposalKind",
    "YettCopula", "independence",
]
__version__ = "0.1.0"
