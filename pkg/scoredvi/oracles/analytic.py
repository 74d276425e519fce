"""
Analytic Denoiser Oracles

Closed-form MMSE denoisers for Gaussian and Gaussian-mixture priors. They are
exact, so they double as ground truth for score and gradient checks.
"""

import logging
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp, softmax

from ..core.image import ImageTensor
from ..errors import ArgumentError
from .base import DenoiserOracle

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


class IdentityOracle(DenoiserOracle):
    """G(x) = x. Its score is identically zero."""

    name = "identity"

    def _denoise(self, noisy: ImageTensor, noise_var: ImageTensor) -> ImageTensor:
        return noisy.copy()


class GaussPriorOracle(DenoiserOracle):
    """
    MMSE denoiser for a per-pixel Gaussian prior N(mean, var).

    ``mean`` and ``var`` broadcast against the image, so scalars give a
    shared prior.
    """

    name = "gauss"

    def __init__(self, mean: npt.ArrayLike, var: npt.ArrayLike):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        if not np.all(self.var > 0):
            raise ArgumentError("Gaussian prior variance must be positive")

    def _denoise(self, noisy: ImageTensor, noise_var: ImageTensor) -> ImageTensor:
        try:
            np.broadcast_shapes(self.mean.shape, self.var.shape, noisy.shape)
        except ValueError as e:
            raise ArgumentError(
                f"Prior shape {self.mean.shape} does not fit image {noisy.shape}"
            ) from e
        # written so that noise_var == 0 returns the input exactly
        return noisy + noise_var / (self.var + noise_var) * (self.mean - noisy)


class GmmPriorOracle(DenoiserOracle):
    """
    MMSE denoiser for a scalar Gaussian mixture prior shared by all pixels.

    Responsibilities are evaluated in log space with max subtraction.
    """

    name = "gmm"

    def __init__(
        self,
        weights: Sequence[float],
        means: Sequence[float],
        variances: Sequence[float],
    ):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)
        if not (self.weights.shape == self.means.shape == self.variances.shape):
            raise ArgumentError("GMM weights, means and variances must match in length")
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ArgumentError("GMM parameters must be non-empty vectors")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-6:
            raise ArgumentError("GMM weights must lie on the simplex")
        if not np.all(self.variances > 0):
            raise ArgumentError("GMM component variances must be positive")

    @property
    def components(self) -> int:
        return int(self.weights.size)

    def _component_terms(self, noisy: np.ndarray, noise_var: np.ndarray):
        shape = (-1,) + (1,) * noisy.ndim
        w = self.weights.reshape(shape)
        m = self.means.reshape(shape)
        total_var = self.variances.reshape(shape) + noise_var
        with np.errstate(divide="ignore"):
            log_w = np.log(w)
        log_joint = log_w - 0.5 * (
            _LOG_2PI + np.log(total_var) + (noisy - m) ** 2 / total_var
        )
        return log_joint, m, total_var

    def _denoise(self, noisy: ImageTensor, noise_var: ImageTensor) -> ImageTensor:
        log_joint, m, total_var = self._component_terms(noisy, noise_var)
        resp = softmax(log_joint, axis=0)
        posterior_means = noisy + noise_var / total_var * (m - noisy)
        return np.sum(resp * posterior_means, axis=0)

    def smoothed_logpdf(self, x: np.ndarray, noise_var: npt.ArrayLike) -> np.ndarray:
        """log p_sigma(x): the prior convolved with N(0, noise_var)."""
        x = np.asarray(x, dtype=np.float64)
        noise_var = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), x.shape)
        log_joint, _, _ = self._component_terms(x, noise_var)
        return logsumexp(log_joint, axis=0)

    @classmethod
    def fit(
        cls,
        values: npt.ArrayLike,
        components: int = 3,
        rng: Optional[np.random.Generator] = None,
        iterations: int = 200,
        var_floor: float = 1e-5,
        tol: float = 1e-10,
    ) -> "GmmPriorOracle":
        """
        Fit a scalar GMM to a pixel histogram with EM.

        Args:
            values: Pixel values (any shape, flattened)
            components: Number of mixture components J
            rng: Generator for the initial means (quantile-jittered)
            iterations: Maximum EM sweeps
            var_floor: Lower bound on component variances
            tol: Stop when the mean log-likelihood improves by less than this
        """
        x = np.asarray(values, dtype=np.float64).ravel()
        if x.size < components:
            raise ArgumentError("Not enough samples to fit the mixture")
        rng = rng if rng is not None else np.random.default_rng(0)
        quantiles = (np.arange(components) + 0.5) / components
        means = np.quantile(x, quantiles) + 1e-3 * rng.standard_normal(components)
        variances = np.full(components, max(x.var(), var_floor))
        weights = np.full(components, 1.0 / components)

        previous = -np.inf
        for _ in range(iterations):
            log_joint = (
                np.log(weights)[:, None]
                - 0.5
                * (
                    _LOG_2PI
                    + np.log(variances)[:, None]
                    + (x[None, :] - means[:, None]) ** 2 / variances[:, None]
                )
            )
            log_norm = logsumexp(log_joint, axis=0)
            resp = np.exp(log_joint - log_norm)
            counts = resp.sum(axis=1) + 1e-12
            weights = counts / counts.sum()
            means = (resp @ x) / counts
            variances = np.maximum(
                (resp * (x[None, :] - means[:, None]) ** 2).sum(axis=1) / counts,
                var_floor,
            )
            current = float(log_norm.mean())
            if current - previous < tol:
                break
            previous = current

        logger.debug(
            f"Fitted {components}-component GMM: weights={weights}, means={means}"
        )
        return cls(weights, means, variances)


def denoise_gauss_prior(
    noisy: ImageTensor, noise_var: ImageTensor, oracle: GaussPriorOracle
) -> ImageTensor:
    """Posterior mean (s^2 x~ + sigma^2 m) / (s^2 + sigma^2) per pixel."""
    return oracle.denoise(noisy, noise_var)


def denoise_gmm_prior(
    noisy: ImageTensor, noise_var: ImageTensor, oracle: GmmPriorOracle
) -> ImageTensor:
    """Responsibility-weighted posterior mean under a scalar GMM prior."""
    return oracle.denoise(noisy, noise_var)
