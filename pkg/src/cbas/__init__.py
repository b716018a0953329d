"""Conditioning by adaptive sampling for design under a biased property oracle."""
from __future__ import annotations

from .core import (
    CbASError,
    ConfigError,
    Conjunction,
    DegenerateWeightsError,
    DensityUnderflowError,
    IllPosedFitError,
    LatentSpaceMismatchError,
    Maximize,
    RelaxationState,
    Specify,
    nearest_rank_percentile,
)
from .engine import CbASConfig, IterationRecord, RunResult, cbas_weight, effective_sample_size, run_cbas
from .models import DiagonalGaussianModel, LinearGaussianLatentModel, ProductCategoricalModel

__all__ = [
    "CbASConfig", "CbASError", "ConfigError", "Conjunction", "DegenerateWeightsError", "DensityUnderflowError",
    "DiagonalGaussianModel", "IllPosedFitError", "IterationRecord", "LatentSpaceMismatchError",
    "LinearGaussianLatentModel", "Maximize", "ProductCategoricalModel", "RelaxationState", "RunResult", "Specify",
    "cbas_weight", "effective_sample_size", "nearest_rank_percentile", "run_cbas",
]
__version__ = "0.1.0"
