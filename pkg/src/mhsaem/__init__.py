"""Minibatch Metropolis-Hastings stochastic-approximation EM for finite
mixtures, with EM/SAEM/MCSAEM/SSAEM/TSAEM baselines."""

from .errors import (EmptyComponentError, GenerationError, MixtureError, NumericalAbort,
                     ParameterError, UnsupportedAlgorithmError, ValidationError)
from .families import ElementwiseFlowParams, GaussianFamily, GaussianParams, SinhArcsinhFamily, get_family
from .model import (MixtureParams, SufficientStats, dataset_loglik, gaussian_params_from,
                    gaussian_stats_of, log_joint, log_marginal, responsibilities)
from .schedules import AnnealSchedule, Schedule
from .synthgen import GenSpec, generate, pairwise_overlap
from .trainers import TrainerConfig, default_init, run

__version__ = "0.1.0"
