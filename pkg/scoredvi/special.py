"""
Special Functions and Closed-Form Divergences

Log-gamma, digamma, trigamma and the Dirichlet normalizer, plus the pointwise
divergence terms that make up the likelihood, noise-precision, assignment and
mixing parts of the loss. Every function accepts scalars or numpy arrays and
broadcasts; additive constants the loss never uses (such as the 1/2 log 2*pi
of the Gaussian log-likelihood) are left out.
"""

from typing import Union

import numpy as np
import numpy.typing as npt
from scipy import special as sp

from .errors import ArgumentError, DomainError

ArrayLike = Union[float, npt.NDArray[np.float64]]

SIMPLEX_TOL = 1e-6


def _require_positive(name: str, *values: ArrayLike) -> None:
    for value in values:
        if not np.all(np.asarray(value) > 0):
            raise DomainError(f"{name} requires strictly positive arguments")


def _as_result(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def log_gamma(x: ArrayLike) -> ArrayLike:
    """Natural log of the gamma function for x > 0."""
    _require_positive("log_gamma", x)
    return _as_result(sp.gammaln(x))


def digamma(x: ArrayLike) -> ArrayLike:
    """Digamma function psi(x) for x > 0."""
    _require_positive("digamma", x)
    return _as_result(sp.psi(x))


def trigamma(x: ArrayLike) -> ArrayLike:
    """Trigamma function psi'(x) for x > 0."""
    _require_positive("trigamma", x)
    return _as_result(sp.polygamma(1, x))


def log_dirichlet_norm(d: npt.ArrayLike, axis: int = 0) -> ArrayLike:
    """log Z_Dir(d) = log Gamma(sum d) - sum log Gamma(d) along ``axis``."""
    d = np.asarray(d, dtype=np.float64)
    _require_positive("log_dirichlet_norm", d)
    return _as_result(sp.gammaln(d.sum(axis=axis)) - sp.gammaln(d).sum(axis=axis))


def kl_gamma(
    alpha_hat: ArrayLike, beta_hat: ArrayLike, alpha: ArrayLike, beta: ArrayLike
) -> ArrayLike:
    """
    KL(Gamma(alpha_hat, beta_hat) || Gamma(alpha, beta)) with rate parameters.

    Raises:
        DomainError: If any parameter is not strictly positive
    """
    _require_positive("kl_gamma", alpha_hat, beta_hat, alpha, beta)
    value = (
        sp.gammaln(alpha)
        - sp.gammaln(alpha_hat)
        + (alpha_hat - alpha) * sp.psi(alpha_hat)
        + alpha * np.log(np.divide(beta_hat, beta))
        + (beta - beta_hat) * np.divide(alpha_hat, beta_hat)
    )
    return _as_result(np.asarray(value))


def kl_dirichlet(d_hat: npt.ArrayLike, d: npt.ArrayLike, axis: int = 0) -> ArrayLike:
    """
    KL(Dir(d_hat) || Dir(d)) with the concentration vector along ``axis``.

    Both arguments must have the same shape.

    Raises:
        DomainError: On nonpositive entries or mismatched lengths
    """
    d_hat = np.asarray(d_hat, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if d.shape != d_hat.shape:
        raise DomainError(
            f"Dirichlet parameter shapes {d_hat.shape} and {d.shape} do not match"
        )
    _require_positive("kl_dirichlet", d_hat, d)
    total = d_hat.sum(axis=axis, keepdims=True)
    cross = ((d_hat - d) * (sp.psi(d_hat) - sp.psi(total))).sum(axis=axis)
    return _as_result(
        cross
        + np.asarray(log_dirichlet_norm(d_hat, axis=axis))
        - np.asarray(log_dirichlet_norm(d, axis=axis))
    )


def check_simplex(pi: np.ndarray, axis: int = 0, tol: float = SIMPLEX_TOL) -> None:
    """Raise DomainError unless ``pi`` is nonnegative and sums to one along ``axis``."""
    if np.any(pi < -tol) or np.any(np.abs(pi.sum(axis=axis) - 1.0) > tol):
        raise DomainError("Assignment probabilities are not on the simplex")


def expected_cat_dirichlet_kl(
    pi: npt.ArrayLike, d_hat: npt.ArrayLike, axis: int = 0
) -> ArrayLike:
    """
    E_{q(omega)} KL(Cat(pi) || Cat(omega)) for q(omega) = Dir(d_hat).

    Zero entries of ``pi`` contribute nothing (0 log 0 = 0).

    Raises:
        DomainError: If ``pi`` is off the simplex or ``d_hat`` is not positive
    """
    pi = np.asarray(pi, dtype=np.float64)
    d_hat = np.asarray(d_hat, dtype=np.float64)
    if pi.shape != d_hat.shape:
        raise ArgumentError(f"pi {pi.shape} and d_hat {d_hat.shape} differ in shape")
    check_simplex(pi, axis=axis)
    _require_positive("expected_cat_dirichlet_kl", d_hat)
    pi = np.clip(pi, 0.0, 1.0)
    total = d_hat.sum(axis=axis, keepdims=True)
    value = sp.xlogy(pi, pi) - pi * (sp.psi(d_hat) - sp.psi(total))
    return _as_result(value.sum(axis=axis))


def l1_pointwise(
    y: ArrayLike,
    mu: ArrayLike,
    sigma2: ArrayLike,
    alpha_hat: ArrayLike,
    beta_hat: ArrayLike,
) -> ArrayLike:
    """
    Negative expected Gaussian log-likelihood of one pixel under one component.

    ((mu - y)^2 + sigma2) * alpha_hat / (2 beta_hat)
        - (psi(alpha_hat) - log beta_hat) / 2

    Raises:
        DomainError: If sigma2 < 0 or alpha_hat, beta_hat are not positive
    """
    if not np.all(np.asarray(sigma2) >= 0):
        raise DomainError("l1_pointwise requires sigma2 >= 0")
    _require_positive("l1_pointwise", alpha_hat, beta_hat)
    spread = (np.subtract(mu, y)) ** 2 + sigma2
    value = spread * np.divide(alpha_hat, 2.0 * np.asarray(beta_hat)) - 0.5 * (
        sp.psi(alpha_hat) - np.log(beta_hat)
    )
    return _as_result(np.asarray(value))
