"""
Network Layers

Minimal single-image layers with explicit forward/backward passes, enough to
build the compact parameter networks. Tensors are (C, H, W) float64 arrays;
there is no batch axis.
"""

from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError


class Layer(ABC):
    """Base class: a differentiable map with optional trainable parameters."""

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {}

    @abstractmethod
    def forward(self, x: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Return the input gradient; parameter gradients are stored on the layer."""
        pass


class Conv2d(Layer):
    """
    3x3 (or k x k) convolution, stride 1, zero padding that preserves size.

    Weights have shape (out, in, k, k); initialization is fan-in scaled
    uniform with zero bias.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        rng: Optional[np.random.Generator] = None,
    ):
        if kernel_size % 2 != 1:
            raise ArgumentError("Conv2d needs an odd kernel size")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = kernel_size // 2
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_channels * kernel_size * kernel_size)
        self.weight = rng.uniform(
            -bound, bound, size=(out_channels, in_channels, kernel_size, kernel_size)
        )
        self.bias = np.zeros(out_channels)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._windows: Optional[np.ndarray] = None
        self._input_shape: Optional[tuple] = None

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def gradients(self) -> Dict[str, np.ndarray]:
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ArgumentError(
                f"Conv2d expected ({self.in_channels}, H, W), got {x.shape}"
            )
        p = self.padding
        padded = np.pad(x, ((0, 0), (p, p), (p, p)))
        # (in, H, W, k, k)
        self._windows = sliding_window_view(
            padded, (self.kernel_size, self.kernel_size), axis=(1, 2)
        )
        self._input_shape = x.shape
        out = np.tensordot(self.weight, self._windows, axes=([1, 2, 3], [0, 3, 4]))
        return out + self.bias[:, None, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._windows is None or self._input_shape is None:
            raise ArgumentError("Conv2d.backward called before forward")
        # weight gradient: correlate the upstream gradient with the input windows
        self.grad_weight = np.tensordot(
            grad_out, self._windows, axes=([1, 2], [1, 2])
        ).reshape(self.weight.shape)
        self.grad_bias = grad_out.sum(axis=(1, 2))

        # input gradient: full correlation with the flipped kernel
        c, h, w = self._input_shape
        k, p = self.kernel_size, self.padding
        padded_grad = np.zeros((c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                padded_grad[:, i : i + h, j : j + w] += np.tensordot(
                    self.weight[:, :, i, j], grad_out, axes=([0], [0])
                )
        return padded_grad[:, p : p + h, p : p + w]


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.1):
        self.slope = slope
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, self.slope * grad_out)


class AvgPool2(Layer):
    """2x2 average pooling over the even crop; odd trailing rows/columns get no gradient."""

    def __init__(self) -> None:
        self._input_shape: Optional[tuple] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        c, h, w = x.shape
        if h < 2 or w < 2:
            raise ArgumentError(f"AvgPool2 needs at least 2x2 input, got {h}x{w}")
        self._input_shape = x.shape
        hh, ww = h // 2, w // 2
        return x[:, : 2 * hh, : 2 * ww].reshape(c, hh, 2, ww, 2).mean(axis=(2, 4))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_in = np.zeros(self._input_shape)
        hh, ww = grad_out.shape[1:]
        spread = np.repeat(np.repeat(grad_out, 2, axis=1), 2, axis=2) / 4.0
        grad_in[:, : 2 * hh, : 2 * ww] = spread
        return grad_in


class Upsample2(Layer):
    """Nearest-neighbour upsampling to a target size; extra rows/columns repeat the edge."""

    def __init__(self) -> None:
        self._rows: Optional[np.ndarray] = None
        self._cols: Optional[np.ndarray] = None
        self._input_shape: Optional[tuple] = None
        self._target: Optional[tuple] = None

    def set_output_size(self, height: int, width: int) -> None:
        self._target = (height, width)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self._target is None:
            raise ArgumentError("Upsample2 output size is not set")
        height, width = self._target
        _, h, w = x.shape
        self._input_shape = x.shape
        self._rows = np.minimum(np.arange(height) // 2, h - 1)
        self._cols = np.minimum(np.arange(width) // 2, w - 1)
        return x[:, self._rows][:, :, self._cols]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_in = np.zeros(self._input_shape)
        np.add.at(grad_in, (slice(None), self._rows[:, None], self._cols[None, :]), grad_out)
        return grad_in


class Sequential(Layer):
    """Chain of layers; parameter names are ``<index>.<name>``."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers: List[Layer] = list(layers)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            f"{i}.{name}": value
            for i, layer in enumerate(self.layers)
            for name, value in layer.parameters().items()
        }

    def gradients(self) -> Dict[str, np.ndarray]:
        return {
            f"{i}.{name}": value
            for i, layer in enumerate(self.layers)
            for name, value in layer.gradients().items()
        }

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out
