"""
Beta-Binomial reliability of repeated implicit feedback.

Listen/skip logs are turned into Beta posteriors over playcount and
relistening recency; posterior means and HDI widths become per-pair
confidence weights for weighted implicit ALS, which is evaluated on a
time-based split.
"""

__version__ = "0.1.0"

from .bayes import BetaParams, Hdi, beta_hdi, beta_mean, beta_quantile, posterior_update, reg_inc_beta
from .grid import GridConfig, PosteriorGrid, fit_grid, interpolate
from .weights import WeightConfig, WeightMatrix, compute_weights
from .als import AlsConfig, FactorModel, train
from .evaluation import SplitConfig, time_split, run_experiment, welch_t_test

__all__ = [
    "BetaParams",
    "Hdi",
    "posterior_update",
    "beta_mean",
    "reg_inc_beta",
    "beta_quantile",
    "beta_hdi",
    "GridConfig",
    "PosteriorGrid",
    "fit_grid",
    "interpolate",
    "WeightConfig",
    "WeightMatrix",
    "compute_weights",
    "AlsConfig",
    "FactorModel",
    "train",
    "SplitConfig",
    "time_split",
    "run_experiment",
    "welch_t_test",
]
