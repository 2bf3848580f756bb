"""Bayesian detection of slope changes in replicated time series."""

__version__ = "0.1.0"

from .model import ChainState, Dataset, SlopeChangeError, log_likelihood, piecewise_mean  # noqa: E402
from .priors import PriorConfig  # noqa: E402
from .sampler import MoveTunables, SamplerConfig, Trace, run_joint, run_series  # noqa: E402
from .synthetic import SimScenario, simulate_dataset  # noqa: E402
from .variance import VarianceConfig  # noqa: E402

__all__ = [
    "ChainState", "Dataset", "SlopeChangeError", "log_likelihood", "piecewise_mean", "PriorConfig",
    "MoveTunables", "SamplerConfig", "Trace", "run_joint", "run_series", "SimScenario",
    "simulate_dataset", "VarianceConfig",
]
