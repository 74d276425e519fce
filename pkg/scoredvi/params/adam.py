"""
Adam Optimizer

Bias-corrected Adam over a dict of named parameter arrays, updated in place.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..errors import ArgumentError


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class Adam:
    """
    Adam with default lr 1e-3, betas (0.9, 0.999) and eps 1e-8.

    Args:
        lr: Step size
        beta1: Decay of the first moment
        beta2: Decay of the second moment
        eps: Denominator offset
    """

    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ArgumentError(f"Adam learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ArgumentError("Adam betas must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(
        self,
        params: Dict[str, np.ndarray],
        grads: Dict[str, np.ndarray],
        state: Optional[AdamState] = None,
    ) -> AdamState:
        """
        Apply one update to ``params`` in place.

        Raises:
            ArgumentError: If a gradient is missing or its shape differs from the parameter
        """
        state = state if state is not None else self.state
        for name, value in params.items():
            if name not in grads:
                raise ArgumentError(f"Missing gradient for parameter {name}")
            if grads[name].shape != value.shape:
                raise ArgumentError(
                    f"Gradient shape {grads[name].shape} does not match "
                    f"parameter {name} shape {value.shape}"
                )

        state.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1**state.t
        correction2 = 1.0 - b2**state.t
        for name, value in params.items():
            grad = grads[name]
            m = state.m.setdefault(name, np.zeros_like(value))
            v = state.v.setdefault(name, np.zeros_like(value))
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            value -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        return state
