"""
Variational Parameters and Link Functions

Theta holds the six K x C x H x W maps of the variational posterior. Backends
produce unconstrained raw heads; the links here map them to Theta and carry
gradients back: softplus plus a floor for the positive maps, softmax over K
for the assignment probabilities, identity for the means.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from scipy.special import expit, softmax

from ..errors import DomainError, NumericError

SIGMA2_FLOOR = 1e-6
ALPHA_FLOOR = 1e-3
BETA_FLOOR = 1e-3
DHAT_FLOOR = 1e-3

THETA_FIELDS: Tuple[str, ...] = ("mu", "sigma2", "alpha", "beta", "pi", "dhat")

_FLOORS = {
    "sigma2": SIGMA2_FLOOR,
    "alpha": ALPHA_FLOOR,
    "beta": BETA_FLOOR,
    "dhat": DHAT_FLOOR,
}


@dataclass
class Theta:
    """
    Variational parameters, each of shape (K, C, H, W).

    Attributes:
        mu: Means of q(x_k)
        sigma2: Variances of q(x_k)
        alpha: Shapes of q(phi_k)
        beta: Rates of q(phi_k)
        pi: Assignment probabilities q(z), a simplex over K
        dhat: Concentrations of q(omega)
    """

    mu: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pi: np.ndarray
    dhat: np.ndarray

    @property
    def components(self) -> int:
        return int(self.mu.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.mu.shape[1:])  # type: ignore[return-value]

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in THETA_FIELDS:
            yield name, getattr(self, name)

    def validate(self, tol: float = 1e-6) -> None:
        """
        Check shapes, positivity floors and the simplex constraint.

        Raises:
            DomainError: If any invariant is violated
        """
        shape = self.mu.shape
        for name, value in self.items():
            if value.shape != shape or value.ndim != 4:
                raise DomainError(f"Theta.{name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise DomainError(f"Theta.{name} has non-finite entries")
        for name, floor in _FLOORS.items():
            if np.any(getattr(self, name) < floor * (1 - 1e-12)):
                raise DomainError(f"Theta.{name} falls below its floor {floor}")
        if np.any(self.pi < 0) or np.any(np.abs(self.pi.sum(axis=0) - 1.0) > tol):
            raise DomainError("Theta.pi is not a simplex over components")


@dataclass
class ThetaGrad:
    """Gradient of a scalar loss with respect to each Theta map."""

    mu: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pi: np.ndarray
    dhat: np.ndarray

    @classmethod
    def zeros_like(cls, theta: Theta) -> "ThetaGrad":
        return cls(**{name: np.zeros_like(value) for name, value in theta.items()})

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in THETA_FIELDS:
            yield name, getattr(self, name)

    def add_(self, other: "ThetaGrad", scale: float = 1.0) -> "ThetaGrad":
        """In-place ``self += scale * other``."""
        for name, value in other.items():
            getattr(self, name)[...] += scale * value
        return self

    def check_finite(self, iteration: Optional[int] = None) -> None:
        for name, value in self.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"Non-finite gradient for {name}", iteration=iteration)


def softplus(raw: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, raw)


def heads_to_theta(heads: Dict[str, np.ndarray]) -> Theta:
    """Map raw heads (keyed like Theta fields) through the link functions."""
    values = {"mu": np.array(heads["mu"], dtype=np.float64)}
    for name, floor in _FLOORS.items():
        values[name] = softplus(heads[name]) + floor
    values["pi"] = softmax(heads["pi"], axis=0)
    return Theta(**values)


def theta_to_head_grads(
    heads: Dict[str, np.ndarray], theta: Theta, grad: ThetaGrad
) -> Dict[str, np.ndarray]:
    """Back-propagate Theta gradients through the link functions to the raw heads."""
    out = {"mu": np.array(grad.mu, dtype=np.float64)}
    for name in _FLOORS:
        out[name] = getattr(grad, name) * expit(heads[name])
    pi = theta.pi
    out["pi"] = pi * (grad.pi - np.sum(pi * grad.pi, axis=0, keepdims=True))
    return out


def inverse_softplus(value: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Raw value whose softplus plus ``floor`` equals ``value``."""
    shifted = np.asarray(value, dtype=np.float64) - floor
    if np.any(shifted <= 0):
        raise DomainError("inverse_softplus needs values above the floor")
    return shifted + np.log(-np.expm1(-shifted))


__all__ = [
    "Theta",
    "ThetaGrad",
    "THETA_FIELDS",
    "SIGMA2_FLOOR",
    "ALPHA_FLOOR",
    "BETA_FLOOR",
    "DHAT_FLOOR",
    "softplus",
    "inverse_softplus",
    "heads_to_theta",
    "theta_to_head_grads",
]
