"""
Base Denoiser Oracle

Interface for MMSE Non-i.i.d Gaussian denoisers and the score extraction that
turns a denoiser residual into the gradient of a noise-smoothed log prior.
"""

import logging
from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np

from ..core.image import ImageTensor, as_image, check_same_shape
from ..errors import ArgumentError, DomainError, OracleError

logger = logging.getLogger(__name__)


class DenoiserOracle(ABC):
    """
    Abstract base class for all denoiser oracles.

    Subclasses implement :meth:`_denoise`; callers use :meth:`denoise`, which
    validates shapes and checks that the output is finite.

    Attributes:
        name: Short identifier used in logs
        validity_range: Optional (sigma_min, sigma_max) in standard-deviation
            units; score extraction clamps sigma into it
        concurrent_safe: Whether calls may run on several threads at once
    """

    name: str = "oracle"
    validity_range: Optional[Tuple[float, float]] = None
    concurrent_safe: bool = True

    def denoise(self, noisy: ImageTensor, noise_var: ImageTensor) -> ImageTensor:
        """
        Return the MMSE estimate of the clean image.

        Args:
            noisy: Corrupted image x~ of shape (C, H, W)
            noise_var: Per-pixel noise variance, same shape, all >= 0

        Raises:
            ArgumentError: On shape mismatch or negative variance
            OracleError: If the implementation returns a malformed result
        """
        noisy = as_image(noisy)
        noise_var = as_image(noise_var)
        check_same_shape(noisy, noise_var, "denoiser input and noise variance")
        if np.any(noise_var < 0):
            raise ArgumentError("Noise variance map has negative entries")
        output = np.asarray(self._denoise(noisy, noise_var), dtype=np.float64)
        if output.shape != noisy.shape:
            raise OracleError(
                f"{self.name} returned shape {output.shape}, expected {noisy.shape}"
            )
        if np.all(np.isfinite(noisy)) and not np.all(np.isfinite(output)):
            raise OracleError(f"{self.name} returned non-finite values")
        return output

    @abstractmethod
    def _denoise(self, noisy: ImageTensor, noise_var: ImageTensor) -> ImageTensor:
        """Compute the denoised image; inputs are already validated."""
        pass

    def clamp_variance(self, noise_var: ImageTensor) -> ImageTensor:
        """Clamp the noise standard deviation into :attr:`validity_range`."""
        if self.validity_range is None:
            return noise_var
        lo, hi = self.validity_range
        return np.clip(np.sqrt(noise_var), lo, hi) ** 2

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(name={self.name!r})"


def score_from_denoiser(
    noisy: ImageTensor, noise_var: ImageTensor, oracle: DenoiserOracle
) -> ImageTensor:
    """
    Score of the sigma-smoothed prior at ``noisy``: (G(x~) - x~) / sigma^2.

    The noise level is clamped into the oracle's validity range first and the
    clamped variance is used both for the denoiser call and the division.

    Raises:
        DomainError: If any noise variance is not strictly positive
    """
    noise_var = as_image(noise_var)
    if not np.all(noise_var > 0):
        raise DomainError("Score is undefined where the noise variance is zero")
    effective_var = oracle.clamp_variance(noise_var)
    denoised = oracle.denoise(noisy, effective_var)
    return (denoised - noisy) / effective_var
