"""
ScoreDVI - single-image denoising with a denoiser-derived prior

Fits a variational posterior over the clean image under a non-i.i.d Gaussian
mixture noise model. The prior enters only through the score of its
noise-smoothed density, which is read off an MMSE denoiser. Any Gaussian
denoiser can therefore serve as the image prior.
"""

__version__ = "1.0.0"
__license__ = "MIT"

from .config import ElboConfig, ScoreDVIConfig
from .engine import ElboBreakdown, RunResult, run
from .noise import estimate_delta, lambda_weight

__all__ = [
    "ElboBreakdown",
    "ElboConfig",
    "RunResult",
    "ScoreDVIConfig",
    "estimate_delta",
    "lambda_weight",
    "run",
    "__version__",
]
