"""
Parameter Backends

A backend owns the trainable state that produces Theta from the noisy image:
either direct per-pixel raw fields, or four compact convolutional networks
(X-net, Phi-net, Z-net and Omega-net). Both emit raw heads that go through
the same link functions.
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core.image import ImageTensor, as_image
from ..errors import ArgumentError, NumericError
from .layers import AvgPool2, Conv2d, Layer, LeakyReLU, Sequential, Upsample2
from .theta import THETA_FIELDS, Theta, ThetaGrad, heads_to_theta, theta_to_head_grads

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.1


class ParamBackend(ABC):
    """
    Abstract base class for Theta parameterizations.

    Usage per iteration: ``theta = forward(y)``, compute loss gradients,
    ``grads = backward(grad_theta)``, then step an optimizer over
    ``parameters()`` with ``grads``.
    """

    kind: str = "abstract"

    def __init__(self, components: int, image_shape: Tuple[int, int, int]):
        if components < 1:
            raise ArgumentError("Number of components must be at least 1")
        self.components = components
        self.image_shape = tuple(image_shape)
        self._heads: Optional[Dict[str, np.ndarray]] = None
        self._theta: Optional[Theta] = None

    def _check_input(self, y: ImageTensor) -> ImageTensor:
        y = as_image(y)
        if y.shape != self.image_shape:
            raise ArgumentError(
                f"{self.kind} backend configured for {self.image_shape}, got {y.shape}"
            )
        return y

    def forward(self, y: ImageTensor) -> Theta:
        """Compute Theta for ``y``; deterministic given the current weights."""
        y = self._check_input(y)
        self._heads = self._forward_heads(y)
        self._theta = heads_to_theta(self._heads)
        return self._theta

    def backward(
        self, grad: ThetaGrad, iteration: Optional[int] = None
    ) -> Dict[str, np.ndarray]:
        """
        Chain Theta gradients through the links and the backend.

        Returns:
            Gradients keyed like :meth:`parameters`

        Raises:
            NumericError: If the upstream gradient has NaN or infinite entries
        """
        if self._heads is None or self._theta is None:
            raise ArgumentError("backward called before forward")
        grad.check_finite(iteration)
        head_grads = theta_to_head_grads(self._heads, self._theta, grad)
        grads = self._backward_heads(head_grads)
        for name, value in grads.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"Non-finite gradient for {name}", iteration=iteration)
        return grads

    @abstractmethod
    def _forward_heads(self, y: ImageTensor) -> Dict[str, np.ndarray]:
        pass

    @abstractmethod
    def _backward_heads(self, head_grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        pass

    @abstractmethod
    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays keyed by name; optimizers update them in place."""
        pass


class DirectBackend(ParamBackend):
    """
    Theta from directly optimized raw fields.

    Initialization: raw mu is ``y`` repeated K times, every other raw field 0.
    """

    kind = "direct"

    def __init__(self, components: int, image_shape: Tuple[int, int, int]):
        super().__init__(components, image_shape)
        shape = (components,) + self.image_shape
        self.fields: Dict[str, np.ndarray] = {
            name: np.zeros(shape) for name in THETA_FIELDS
        }

    def initialize(self, y: ImageTensor) -> "DirectBackend":
        y = self._check_input(y)
        for name in THETA_FIELDS:
            self.fields[name][...] = 0.0
        self.fields["mu"][...] = y[np.newaxis]
        return self

    def _forward_heads(self, y: ImageTensor) -> Dict[str, np.ndarray]:
        return self.fields

    def _backward_heads(self, head_grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return {name: head_grads[name] for name in THETA_FIELDS}

    def parameters(self) -> Dict[str, np.ndarray]:
        return self.fields


class XNet(Layer):
    """
    Two-scale encoder-decoder with a skip connection.

    enc (2 convs) -> avg-pool -> mid (2 convs) -> upsample -> concat(enc)
    -> conv -> head conv with ``out_channels`` maps.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        width: int = 32,
        rng: Optional[np.random.Generator] = None,
    ):
        self.encoder = Sequential(
            [
                Conv2d(in_channels, width, rng=rng),
                LeakyReLU(LEAKY_SLOPE),
                Conv2d(width, width, rng=rng),
                LeakyReLU(LEAKY_SLOPE),
            ]
        )
        self.pool = AvgPool2()
        self.middle = Sequential(
            [
                Conv2d(width, width, rng=rng),
                LeakyReLU(LEAKY_SLOPE),
                Conv2d(width, width, rng=rng),
                LeakyReLU(LEAKY_SLOPE),
            ]
        )
        self.upsample = Upsample2()
        self.decoder = Sequential(
            [
                Conv2d(2 * width, width, rng=rng),
                LeakyReLU(LEAKY_SLOPE),
                Conv2d(width, out_channels, rng=rng),
            ]
        )
        self.width = width

    def _parts(self) -> List[Tuple[str, Layer]]:
        return [("enc", self.encoder), ("mid", self.middle), ("dec", self.decoder)]

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{name}": value
            for prefix, part in self._parts()
            for name, value in part.parameters().items()
        }

    def gradients(self) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{name}": value
            for prefix, part in self._parts()
            for name, value in part.gradients().items()
        }

    def forward(self, x: np.ndarray) -> np.ndarray:
        skip = self.encoder.forward(x)
        low = self.middle.forward(self.pool.forward(skip))
        self.upsample.set_output_size(*skip.shape[1:])
        up = self.upsample.forward(low)
        return self.decoder.forward(np.concatenate([up, skip], axis=0))

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_cat = self.decoder.backward(grad_out)
        grad_up, grad_skip = grad_cat[: self.width], grad_cat[self.width :]
        grad_low = self.upsample.backward(grad_up)
        grad_skip = grad_skip + self.pool.backward(self.middle.backward(grad_low))
        return self.encoder.backward(grad_skip)


def plain_net(
    in_channels: int,
    out_channels: int,
    width: int = 32,
    depth: int = 5,
    rng: Optional[np.random.Generator] = None,
) -> Sequential:
    """``depth`` plain 3x3 conv layers with leaky rectifiers between them."""
    layers: List[Layer] = []
    channels = in_channels
    for _ in range(depth - 1):
        layers += [Conv2d(channels, width, rng=rng), LeakyReLU(LEAKY_SLOPE)]
        channels = width
    layers.append(Conv2d(channels, out_channels, rng=rng))
    return Sequential(layers)


class ConvBackend(ParamBackend):
    """
    Theta from four compact convolutional networks fed with ``y``.

    X-net emits raw (mu, sigma2), Phi-net raw (alpha, beta), Z-net the pi
    logits and Omega-net raw dhat. Each head block holds K*C maps laid out
    component-major.
    """

    kind = "conv"

    def __init__(
        self,
        components: int,
        image_shape: Tuple[int, int, int],
        width: int = 32,
        seed: int = 0,
    ):
        super().__init__(components, image_shape)
        channels = self.image_shape[0]
        kc = components * channels
        rng = np.random.default_rng(seed)
        self.nets: Dict[str, Layer] = {
            "xnet": XNet(channels, 2 * kc, width=width, rng=rng),
            "phinet": plain_net(channels, 2 * kc, width=width, rng=rng),
            "znet": plain_net(channels, kc, width=width, rng=rng),
            "omeganet": plain_net(channels, kc, width=width, rng=rng),
        }
        self._layout: Dict[str, Tuple[str, int]] = {
            "mu": ("xnet", 0),
            "sigma2": ("xnet", 1),
            "alpha": ("phinet", 0),
            "beta": ("phinet", 1),
            "pi": ("znet", 0),
            "dhat": ("omeganet", 0),
        }

    def _head_shape(self) -> Tuple[int, ...]:
        return (self.components,) + self.image_shape

    def _forward_heads(self, y: ImageTensor) -> Dict[str, np.ndarray]:
        kc = self.components * self.image_shape[0]
        outputs = {name: net.forward(y) for name, net in self.nets.items()}
        return {
            field: outputs[net][block * kc : (block + 1) * kc].reshape(self._head_shape())
            for field, (net, block) in self._layout.items()
        }

    def _backward_heads(self, head_grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        kc = self.components * self.image_shape[0]
        spatial = self.image_shape[1:]
        grads: Dict[str, np.ndarray] = {}
        for name, net in self.nets.items():
            blocks = sorted(
                (block, field)
                for field, (owner, block) in self._layout.items()
                if owner == name
            )
            grad_out = np.concatenate(
                [head_grads[field].reshape((kc,) + spatial) for _, field in blocks],
                axis=0,
            )
            net.backward(grad_out)
            for key, value in net.gradients().items():
                grads[f"{name}.{key}"] = value
        return grads

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            f"{name}.{key}": value
            for name, net in self.nets.items()
            for key, value in net.parameters().items()
        }

    def zero_(self) -> "ConvBackend":
        """Zero every weight and bias (all heads become zero)."""
        for value in self.parameters().values():
            value[...] = 0.0
        return self


def create_backend(
    kind: str,
    components: int,
    y: ImageTensor,
    width: int = 32,
    seed: int = 0,
) -> ParamBackend:
    """Build and initialize a backend of the given kind for image ``y``."""
    y = as_image(y)
    if kind == "direct":
        return DirectBackend(components, y.shape).initialize(y)
    if kind == "conv":
        return ConvBackend(components, y.shape, width=width, seed=seed)
    raise ArgumentError(f"Unknown backend kind: {kind}")
