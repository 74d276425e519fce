"""
ScoreDVI Denoiser Oracles

Pluggable MMSE Gaussian denoisers and score extraction.
"""

from .analytic import (
    GaussPriorOracle,
    GmmPriorOracle,
    IdentityOracle,
    denoise_gauss_prior,
    denoise_gmm_prior,
)
from .base import DenoiserOracle, score_from_denoiser
from .external import ExternalOracle, external_denoise

__all__ = [
    "DenoiserOracle",
    "score_from_denoiser",
    "IdentityOracle",
    "GaussPriorOracle",
    "GmmPriorOracle",
    "ExternalOracle",
    "external_denoise",
    "denoise_gauss_prior",
    "denoise_gmm_prior",
]
