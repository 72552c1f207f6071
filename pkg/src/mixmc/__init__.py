"""Rejection-free marginal-posterior sampling for Bayesian mixture models."""

from .models import (
    CategoricalModel,
    ComponentStats,
    GaussianModel,
    NullModel,
    PoissonModel,
)
from .priors import PriorConfig
from .sampler import Chain, RunConfig, RunResult, SampleRecord, run, step, step_general_eta
from .state import PartitionState

__version__ = "0.1.0"

__all__ = [
    "CategoricalModel",
    "Chain",
    "ComponentStats",
    "GaussianModel",
    "NullModel",
    "PartitionState",
    "PoissonModel",
    "PriorConfig",
    "RunConfig",
    "RunResult",
    "SampleRecord",
    "run",
    "step",
    "step_general_eta",
]
