"""Latent world model guided by a frozen reasoning model's hidden states."""
from __future__ import annotations

from .config import VARIANTS, RunConfig, load_config, resolve_variant
from .errors import BoundsError, ConfigError, DataError, DimensionError, GuidedWMError, NumericalError
from .metrics import MetricReport, accuracy, ade, cosine_distance, fde, feature_distance, latent_smooth_l1
from .pipeline import prepare
from .sampling import make_plan
from .training import WorldModel, evaluate, load_resources, train

__version__ = "0.1.0"

__all__ = [
    "VARIANTS", "RunConfig", "load_config", "resolve_variant",
    "BoundsError", "ConfigError", "DataError", "DimensionError", "GuidedWMError", "NumericalError",
    "MetricReport", "accuracy", "ade", "cosine_distance", "fde", "feature_distance", "latent_smooth_l1",
    "prepare", "make_plan", "WorldModel", "evaluate", "load_resources", "train",
]
