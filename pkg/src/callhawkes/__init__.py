"""Spatiotemporal Hawkes models for call sequences recorded on an acoustic array."""

from .core import ALL_VARIANTS, ModelParams, ModelVariant, RecorderArray, TimeGrid, ValidationError
from .inference import MCMCConfig, PriorConfig, run_mcmc
from .intensity import HawkesModel

__version__ = "0.1.0"

__all__ = ["ALL_VARIANTS", "HawkesModel", "MCMCConfig", "ModelParams", "ModelVariant", "PriorConfig",
           "RecorderArray", "TimeGrid", "ValidationError", "run_mcmc"]
