"""Derivative-free ensemble sampling for Bayesian inverse problems.

The main sampler, :func:`run_sampler`, evolves an ensemble of particles under
covariance-preconditioned underdamped Langevin dynamics with ensemble
differences standing in for forward-model gradients.
"""

from .baselines import PcnConfig, eks_step, hmc_chain, pcn_chain, run_eks
from .dynamics import SamplerConfig, StepRecord, ekhmc_step, initial_ensemble, run_sampler
from .ensemble import Ensemble, ensemble_covariance, generalized_sqrt, preconditioned_noise
from .errors import EvaluationError, InvalidInputError, NumericalError, SamplerError
from .inverse import InverseProblem, LinearProblem, posterior_moments, random_linear_problem

__version__ = "0.1.0"

__all__ = [
    "Ensemble",
    "EvaluationError",
    "InvalidInputError",
    "InverseProblem",
    "LinearProblem",
    "NumericalError",
    "PcnConfig",
    "SamplerConfig",
    "SamplerError",
    "StepRecord",
    "ekhmc_step",
    "eks_step",
    "ensemble_covariance",
    "generalized_sqrt",
    "hmc_chain",
    "initial_ensemble",
    "pcn_chain",
    "posterior_moments",
    "preconditioned_noise",
    "random_linear_problem",
    "run_eks",
    "run_sampler",
]
