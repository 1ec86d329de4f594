"""Variance change point detection with credible sets.

A product of single-change scale models, fitted by variational coordinate
ascent, returns one posterior over change locations per effect.  Point
estimates and credible sets are read off those posteriors.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    InvalidInputError,
    ModelConfig,
    SingleEffectPosterior,
    TimeSeries,
    expected_tau2,
    log_marginal_likelihood,
    multi_obs_posterior,
    single_effect_posterior,
)
from .summaries import ChangePointReport, CredibleSet, credible_set, detect, map_estimate  # noqa: E402
from .engine import PriscaFit, auto_fit, dedup_overlaps, elbo, fit, residuals  # noqa: E402

__all__ = [
    "ChangePointReport",
    "CredibleSet",
    "InvalidInputError",
    "ModelConfig",
    "PriscaFit",
    "SingleEffectPosterior",
    "TimeSeries",
    "auto_fit",
    "credible_set",
    "dedup_overlaps",
    "detect",
    "elbo",
    "expected_tau2",
    "fit",
    "log_marginal_likelihood",
    "map_estimate",
    "multi_obs_posterior",
    "residuals",
    "single_effect_posterior",
]
