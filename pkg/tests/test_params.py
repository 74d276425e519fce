"""
Tests for variational parameters, layers, backends, Adam and checkpoints.
"""

import numpy as np
import pytest

from scoredvi.errors import ArgumentError, DomainError, FormatError, ImageIOError, NumericError
from scoredvi.params import (
    Adam,
    ConvBackend,
    DirectBackend,
    create_backend,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from scoredvi.params.checkpoint import manifest_path
from scoredvi.params.layers import AvgPool2, Conv2d, LeakyReLU, Sequential, Upsample2
from scoredvi.params.theta import (
    SIGMA2_FLOOR,
    THETA_FIELDS,
    Theta,
    ThetaGrad,
    heads_to_theta,
    inverse_softplus,
    softplus,
    theta_to_head_grads,
)
from scoredvi.selftest import central_difference, relative_error


def _heads(rng, shape=(2, 1, 3, 3)):
    return {name: rng.standard_normal(shape) for name in THETA_FIELDS}


def test_heads_to_theta_satisfies_invariants(rng):
    """Test floors and the simplex after the link functions."""
    heads = _heads(rng)
    heads["sigma2"][...] = -1000.0
    theta = heads_to_theta(heads)
    theta.validate()
    assert np.all(theta.sigma2 >= SIGMA2_FLOOR)
    np.testing.assert_allclose(theta.pi.sum(axis=0), 1.0)
    np.testing.assert_array_equal(theta.mu, heads["mu"])


def test_theta_validate_rejects_bad_values(rng):
    """Test shape, floor and simplex violations."""
    theta = heads_to_theta(_heads(rng))
    theta.pi = theta.pi * 2.0
    with pytest.raises(DomainError):
        theta.validate()

    theta = heads_to_theta(_heads(rng))
    theta.sigma2 = np.zeros_like(theta.sigma2)
    with pytest.raises(DomainError):
        theta.validate()

    theta = heads_to_theta(_heads(rng))
    theta.alpha = theta.alpha[:1]
    with pytest.raises(DomainError):
        theta.validate()


def test_link_gradients_match_finite_differences(rng):
    """Test theta_to_head_grads against central differences through the links."""
    heads = _heads(rng)
    weights = _heads(rng)

    def loss() -> float:
        theta = heads_to_theta(heads)
        return float(sum(np.sum(weights[name] * value) for name, value in theta.items()))

    theta = heads_to_theta(heads)
    analytic = theta_to_head_grads(heads, theta, ThetaGrad(**weights))
    for name in THETA_FIELDS:
        numeric = central_difference(loss, heads[name])
        assert relative_error(numeric, analytic[name]) < 1e-7, name


def test_inverse_softplus():
    """Test that inverse_softplus inverts softplus plus a floor."""
    values = np.array([1e-3, 0.5, 20.0])
    np.testing.assert_allclose(softplus(inverse_softplus(values + 0.1, 0.1)) + 0.1, values + 0.1)
    with pytest.raises(DomainError):
        inverse_softplus(np.array([0.05]), floor=0.1)


def test_theta_grad_helpers(rng):
    """Test zeros_like, add_ and the finiteness check."""
    theta = heads_to_theta(_heads(rng))
    grad = ThetaGrad.zeros_like(theta)
    other = ThetaGrad(**{name: np.ones_like(value) for name, value in theta.items()})
    grad.add_(other, scale=2.0)
    np.testing.assert_array_equal(grad.dhat, 2.0)

    grad.mu[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError) as exc_info:
        grad.check_finite(iteration=4)
    assert exc_info.value.iteration == 4


@pytest.mark.parametrize(
    "layer, shape",
    [
        (Conv2d(2, 3, rng=np.random.default_rng(0)), (2, 5, 4)),
        (AvgPool2(), (2, 5, 6)),
        (Sequential([Conv2d(1, 2, rng=np.random.default_rng(1)), AvgPool2()]), (1, 6, 6)),
    ],
)
def test_layer_backward_matches_finite_differences(layer, shape, rng):
    """Test input and parameter gradients of the layers."""
    x = rng.standard_normal(shape)
    weights = rng.standard_normal(layer.forward(x).shape)

    def loss() -> float:
        return float(np.sum(weights * layer.forward(x)))

    layer.forward(x)
    grad_x = layer.backward(weights)
    param_grads = {k: v.copy() for k, v in layer.gradients().items()}
    assert relative_error(central_difference(loss, x), grad_x) < 1e-6
    for name, value in layer.parameters().items():
        assert relative_error(central_difference(loss, value), param_grads[name]) < 1e-6


def test_leaky_relu_and_upsample():
    """Test the rectifier slope and edge-repeating upsampling."""
    relu = LeakyReLU(0.1)
    np.testing.assert_allclose(relu.forward(np.array([[[-2.0, 3.0]]])), [[[-0.2, 3.0]]])
    np.testing.assert_allclose(relu.backward(np.ones((1, 1, 2))), [[[0.1, 1.0]]])

    up = Upsample2()
    with pytest.raises(ArgumentError):
        up.forward(np.zeros((1, 2, 2)))
    up.set_output_size(5, 4)
    out = up.forward(np.arange(4.0).reshape(1, 2, 2))
    assert out.shape == (1, 5, 4)
    np.testing.assert_array_equal(out[0, 4], out[0, 3])
    grad = up.backward(np.ones((1, 5, 4)))
    np.testing.assert_array_equal(grad, [[[4.0, 4.0], [6.0, 6.0]]])


def test_conv2d_validation():
    """Test kernel and channel checks."""
    with pytest.raises(ArgumentError):
        Conv2d(1, 1, kernel_size=2)
    with pytest.raises(ArgumentError):
        Conv2d(2, 1).forward(np.zeros((1, 4, 4)))


def test_direct_backend_initialization(small_image):
    """Test mu = y, uniform pi and shared positive fields at initialization."""
    backend = create_backend("direct", 3, small_image)
    assert isinstance(backend, DirectBackend)
    theta = backend.forward(small_image)
    assert theta.mu.shape == (3,) + small_image.shape
    np.testing.assert_array_equal(theta.mu[1], small_image)
    np.testing.assert_allclose(theta.pi, 1.0 / 3.0)
    np.testing.assert_allclose(theta.sigma2, np.log(2.0) + SIGMA2_FLOOR)

    with pytest.raises(ArgumentError):
        backend.forward(small_image[:, :3])
    with pytest.raises(ArgumentError):
        create_backend("lstm", 3, small_image)


def test_backend_backward_requires_forward(small_image):
    """Test that backward before forward is rejected."""
    backend = DirectBackend(2, small_image.shape)
    theta = heads_to_theta(_heads(np.random.default_rng(0), (2,) + small_image.shape))
    with pytest.raises(ArgumentError):
        backend.backward(ThetaGrad.zeros_like(theta))


def test_backend_rejects_non_finite_gradient(small_image):
    """Test that a NaN upstream gradient raises NumericError."""
    backend = create_backend("direct", 2, small_image)
    theta = backend.forward(small_image)
    grad = ThetaGrad.zeros_like(theta)
    grad.sigma2[...] = np.inf
    with pytest.raises(NumericError):
        backend.backward(grad, iteration=0)


def test_conv_backend_gradients(rng):
    """Test ConvBackend parameter gradients on sampled entries."""
    y = rng.uniform(0.0, 1.0, (1, 8, 7))
    backend = ConvBackend(2, y.shape, width=3, seed=5)
    weights = {name: rng.standard_normal((2,) + y.shape) for name in THETA_FIELDS}

    def loss() -> float:
        theta = backend.forward(y)
        return float(sum(np.sum(weights[name] * value) for name, value in theta.items()))

    backend.forward(y)
    grads = backend.backward(ThetaGrad(**weights))
    params = backend.parameters()
    assert set(grads) == set(params)
    assert "xnet.enc.0.weight" in params
    for name in ("xnet.enc.0.weight", "xnet.dec.2.bias", "znet.8.weight", "omeganet.0.bias"):
        picks = rng.choice(params[name].size, size=min(5, params[name].size), replace=False)
        numeric = central_difference(loss, params[name], step=1e-6, indices=picks)
        analytic = grads[name].reshape(-1)[picks]
        assert relative_error(numeric.reshape(-1)[picks], analytic) < 1e-4, name


def test_conv_backend_zero_weights_give_uniform_theta(rng):
    """Test that zeroed networks emit zero heads."""
    y = rng.uniform(0.0, 1.0, (1, 6, 6))
    backend = ConvBackend(2, y.shape, width=2).zero_()
    theta = backend.forward(y)
    np.testing.assert_array_equal(theta.mu, 0.0)
    np.testing.assert_allclose(theta.pi, 0.5)


def test_adam_first_step_moves_by_lr():
    """Test the bias-corrected first step of size lr against the gradient sign."""
    params = {"w": np.array([1.0, -1.0, 0.5])}
    grads = {"w": np.array([0.3, -2.0, 1e3])}
    Adam(lr=0.01).step(params, grads)
    np.testing.assert_allclose(params["w"], [0.99, -0.99, 0.49], rtol=1e-6)


def test_adam_minimizes_quadratic():
    """Test convergence on a simple quadratic."""
    params = {"w": np.array([3.0, -2.0])}
    optimizer = Adam(lr=0.05)
    for _ in range(2000):
        optimizer.step(params, {"w": 2.0 * params["w"]})
    np.testing.assert_allclose(params["w"], 0.0, atol=0.05)


def test_adam_zero_gradient_leaves_parameters():
    """Test that a zero gradient never moves the parameters."""
    params = {"w": np.array([0.25, -3.0, 7.0])}
    optimizer = Adam(lr=0.1)
    for _ in range(10):
        optimizer.step(params, {"w": np.zeros(3)})
    np.testing.assert_array_equal(params["w"], [0.25, -3.0, 7.0])


def test_adam_constant_gradient_trajectory():
    """Test 100 steps under a constant gradient: each step moves lr g / (|g| + eps)."""
    g = np.array([0.5, -2.0, 1e-3])
    params = {"w": np.zeros(3)}
    optimizer = Adam(lr=1e-2)
    for t in range(1, 101):
        optimizer.step(params, {"w": g})
        np.testing.assert_allclose(params["w"], -t * 1e-2 * g / (np.abs(g) + 1e-8), rtol=1e-8)
    assert optimizer.state.t == 100


def test_adam_validation():
    """Test missing and mismatched gradients and bad settings."""
    optimizer = Adam()
    with pytest.raises(ArgumentError):
        optimizer.step({"w": np.zeros(2)}, {})
    with pytest.raises(ArgumentError):
        optimizer.step({"w": np.zeros(2)}, {"w": np.zeros(3)})
    with pytest.raises(ArgumentError):
        Adam(lr=0.0)
    with pytest.raises(ArgumentError):
        Adam(beta1=1.0)


def test_checkpoint_roundtrip(tmp_path, rng):
    """Test save/read/load of named tensors."""
    params = {"a.weight": rng.standard_normal((2, 3)), "a.bias": np.array(0.25)}
    path = tmp_path / "weights.ckpt"
    manifest = save_checkpoint(path, params)
    assert manifest == manifest_path(path)
    assert manifest.read_text().splitlines()[1].startswith("a.bias - ")

    stored = read_checkpoint(path)
    np.testing.assert_allclose(stored["a.weight"], params["a.weight"], rtol=1e-6)

    target = {"a.weight": np.zeros((2, 3)), "a.bias": np.zeros(())}
    load_checkpoint(path, target)
    assert float(target["a.bias"]) == 0.25


def test_checkpoint_errors(tmp_path):
    """Test missing files, malformed manifests and mismatched targets."""
    path = tmp_path / "weights.ckpt"
    with pytest.raises(ImageIOError):
        read_checkpoint(path)

    save_checkpoint(path, {"w": np.zeros(3)})
    with pytest.raises(ArgumentError):
        load_checkpoint(path, {"v": np.zeros(3)})
    with pytest.raises(ArgumentError):
        load_checkpoint(path, {"w": np.zeros(4)})
    with pytest.raises(ArgumentError):
        save_checkpoint(path, {"bad name": np.zeros(1)})

    manifest_path(path).write_text("w 3\n")
    with pytest.raises(FormatError):
        read_checkpoint(path)


def test_backend_resume_from_checkpoint(tmp_path, rng):
    """Test that loading a checkpoint reproduces the saved backend output."""
    y = rng.uniform(0.0, 1.0, (1, 6, 6))
    source = ConvBackend(2, y.shape, width=2, seed=1)
    path = tmp_path / "conv.ckpt"
    save_checkpoint(path, source.parameters())

    target = ConvBackend(2, y.shape, width=2, seed=2)
    load_checkpoint(path, target.parameters())
    np.testing.assert_allclose(
        target.forward(y).mu, source.forward(y).mu, rtol=1e-5, atol=1e-6
    )
