"""Threshold tests for discrimination, built on discriminant distributions.

The package fits Bayesian threshold tests (frisk-decision and censored
stop-decision models) with a gradient-based dynamic-trajectory HMC
sampler, and ships the robustness-check battery needed to trust a fit:
posterior predictive checks, threshold-heterogeneity sweeps, subset
disaggregation, placebo relabeling, and census sensitivity.
"""

from threshtest.distributions import (
    Beta,
    DiscParams,
    GeneralDiscParams,
    LogitNormal,
    RefDist,
    canonicalize,
    ccdf,
    conditional_mean,
    g,
    g_inv,
    log_ccdf,
    log_pdf,
    pdf,
    posterior_probability,
    ref_cdf,
    ref_pdf,
    sample,
)
from threshtest.frisk import CellCounts, FriskModel, extract_thresholds
from threshtest.params import ModelParams, ParamLayout, PriorConfig
from threshtest.sampler import PosteriorDraws, SamplerConfig
from threshtest.stop import PrecinctStopData, StopModel

__version__ = "0.1.0"

__all__ = [
    "Beta",
    "CellCounts",
    "DiscParams",
    "FriskModel",
    "GeneralDiscParams",
    "LogitNormal",
    "ModelParams",
    "ParamLayout",
    "PosteriorDraws",
    "PrecinctStopData",
    "PriorConfig",
    "RefDist",
    "SamplerConfig",
    "StopModel",
    "canonicalize",
    "ccdf",
    "conditional_mean",
    "extract_thresholds",
    "g",
    "g_inv",
    "log_ccdf",
    "log_pdf",
    "pdf",
    "posterior_probability",
    "ref_cdf",
    "ref_pdf",
    "sample",
    "__version__",
]
