"""
Synthetic Scenes and Ground Truth

Clean scene generators, noise models, exact conjugate posteriors and the
dense-matrix check of the denoiser-score identity. These supply the ground
truth that the loss, gradients and the optimization loop are verified against.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import linalg
from scipy.ndimage import convolve, uniform_filter

from .config import ScoreDVIConfig
from .core.image import ImageTensor, as_image, check_same_shape
from .core.tensorio import read_tensor, write_tensor
from .errors import ArgumentError, ConfigError, DomainError, ImageIOError
from .oracles.analytic import GaussPriorOracle, GmmPriorOracle
from .oracles.base import DenoiserOracle

logger = logging.getLogger(__name__)

SCENE_KINDS = ("constant", "ramp", "checker", "smooth-random")
NOISE_KINDS = ("awgn", "non-iid", "correlated", "signal-dependent")

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class NoiseModel:
    """
    Generative law of the additive noise.

    Attributes:
        kind: awgn, non-iid, correlated or signal-dependent
        sigma: Marginal std for awgn and correlated noise
        var_map: Per-pixel variance for non-iid noise
        kernel: 2-D convolution kernel for correlated noise (sums to 1)
        a: Signal-dependent slope, variance = a * x + b
        b: Signal-dependent offset
    """

    kind: str = "awgn"
    sigma: float = 0.0
    var_map: Optional[np.ndarray] = None
    kernel: Optional[np.ndarray] = None
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ArgumentError(f"Noise kind must be one of {list(NOISE_KINDS)}")
        if self.sigma < 0:
            raise DomainError("Noise sigma must be nonnegative")
        if self.kind == "non-iid":
            if self.var_map is None:
                raise ArgumentError("non-iid noise needs a variance map")
            self.var_map = np.asarray(self.var_map, dtype=np.float64)
            if np.any(self.var_map < 0):
                raise DomainError("Noise variance map has negative entries")
        if self.kind == "correlated":
            kernel = np.ones((3, 3)) / 9.0 if self.kernel is None else self.kernel
            self.kernel = np.asarray(kernel, dtype=np.float64)
            if self.kernel.ndim != 2 or abs(self.kernel.sum() - 1.0) > 1e-9:
                raise ArgumentError("Correlation kernel must be 2-D and sum to 1")

    def variance(self, x: ImageTensor) -> ImageTensor:
        """Per-pixel marginal noise variance for clean image ``x``."""
        x = as_image(x)
        if self.kind in ("awgn", "correlated"):
            return np.full(x.shape, self.sigma**2)
        if self.kind == "non-iid":
            return np.broadcast_to(self.var_map, x.shape).astype(np.float64)
        var = self.a * x + self.b
        if np.any(var < 0):
            raise DomainError("Signal-dependent variance a*x + b is negative")
        return var


@dataclass
class ScenePrior:
    """
    Prior over clean pixels: per-pixel Gaussian or a shared scalar GMM.

    Gaussian ``mean`` and ``var`` broadcast against the image.
    """

    kind: str = "gauss"
    mean: Any = 0.5
    var: Any = 0.01
    weights: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    variances: Optional[np.ndarray] = None
    _gmm: Optional[GmmPriorOracle] = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind == "gauss":
            self.mean = np.asarray(self.mean, dtype=np.float64)
            self.var = np.asarray(self.var, dtype=np.float64)
            if not np.all(self.var > 0):
                raise DomainError("Gaussian prior variance must be positive")
        elif self.kind == "gmm":
            self._gmm = GmmPriorOracle(self.weights, self.means, self.variances)
        else:
            raise ArgumentError(f"Unknown prior kind: {self.kind}")

    @classmethod
    def from_gmm(cls, oracle: GmmPriorOracle) -> "ScenePrior":
        return cls(
            kind="gmm",
            weights=oracle.weights,
            means=oracle.means,
            variances=oracle.variances,
        )

    def oracle(self) -> DenoiserOracle:
        """The exact MMSE denoiser for this prior."""
        if self.kind == "gauss":
            return GaussPriorOracle(self.mean, self.var)
        return self._gmm

    def smoothed_logpdf(self, x: npt.ArrayLike, noise_var: npt.ArrayLike) -> np.ndarray:
        """Pointwise log density of the prior convolved with N(0, noise_var)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gauss":
            total = self.var + np.asarray(noise_var, dtype=np.float64)
            return -0.5 * (_LOG_2PI + np.log(total) + (x - self.mean) ** 2 / total)
        return self._gmm.smoothed_logpdf(x, noise_var)

    def sample(self, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        """Draw a clean image from the prior."""
        if self.kind == "gauss":
            mean = np.broadcast_to(self.mean, shape)
            std = np.sqrt(np.broadcast_to(self.var, shape))
            return mean + std * rng.standard_normal(shape)
        labels = rng.choice(self._gmm.components, size=shape, p=self._gmm.weights)
        return self._gmm.means[labels] + np.sqrt(self._gmm.variances[labels]) * rng.standard_normal(shape)


def _size(size: Union[int, Tuple[int, int]]) -> Tuple[int, int]:
    height, width = (size, size) if isinstance(size, int) else size
    return int(height), int(width)


def gen_clean(
    kind: str,
    size: Union[int, Tuple[int, int]],
    rng: Optional[np.random.Generator] = None,
    channels: int = 1,
    value: float = 0.5,
) -> ImageTensor:
    """
    Generate a clean test scene with values in [0, 1].

    Args:
        kind: constant, ramp (0..1 along each row), checker (0/1 per pixel) or
            smooth-random (box-blurred uniform noise rescaled to [0.2, 0.8])
        size: Side length or (height, width)
        rng: Generator for smooth-random scenes
        channels: Number of channels
        value: Level of constant scenes
    """
    height, width = _size(size)
    if height < 1 or width < 1 or channels < 1:
        raise ArgumentError(f"Invalid scene size {channels}x{height}x{width}")
    shape = (channels, height, width)

    if kind == "constant":
        return np.full(shape, float(value))
    if kind == "ramp":
        return np.broadcast_to(np.linspace(0.0, 1.0, width), shape).copy()
    if kind == "checker":
        rows, cols = np.indices((height, width))
        return np.broadcast_to(((rows + cols) % 2).astype(np.float64), shape).copy()
    if kind == "smooth-random":
        rng = rng if rng is not None else np.random.default_rng(0)
        scene = rng.uniform(size=shape)
        # two passes of the 7x7 box keep neighbour steps small after rescaling
        for _ in range(2):
            scene = uniform_filter(scene, size=(1, 7, 7), mode="reflect")
        lo = scene.min(axis=(1, 2), keepdims=True)
        hi = scene.max(axis=(1, 2), keepdims=True)
        return 0.2 + 0.6 * (scene - lo) / np.maximum(hi - lo, 1e-12)
    raise ArgumentError(f"Scene kind must be one of {list(SCENE_KINDS)}")


def add_noise(x: ImageTensor, model: NoiseModel, rng: np.random.Generator) -> ImageTensor:
    """
    Corrupt ``x`` with noise drawn from ``model``; the result is not clamped.

    Correlated noise convolves a white field with the kernel (periodic
    boundary) and rescales it back to the marginal std ``model.sigma``.

    Raises:
        DomainError: If any variance is negative
    """
    x = as_image(x)
    if model.kind == "correlated":
        white = rng.standard_normal(x.shape)
        kernel = model.kernel[np.newaxis]
        colored = convolve(white, kernel, mode="wrap")
        gain = np.sqrt(np.sum(model.kernel**2))
        return x + model.sigma * colored / gain
    var = model.variance(x)
    if model.kind == "non-iid":
        check_same_shape(var, x, "variance map and image")
    return x + np.sqrt(var) * rng.standard_normal(x.shape)


def exact_posterior_gauss(
    y: ImageTensor, prior: ScenePrior, noise_var: npt.ArrayLike
) -> Tuple[ImageTensor, ImageTensor]:
    """
    Conjugate posterior of a Gaussian prior under diagonal Gaussian noise.

    Returns:
        Per-pixel mean (s^2 y + sigma^2 m) / (s^2 + sigma^2) and variance
        s^2 sigma^2 / (s^2 + sigma^2)
    """
    if prior.kind != "gauss":
        raise ArgumentError("exact_posterior_gauss needs a Gaussian prior")
    y = as_image(y)
    noise_var = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), y.shape)
    if np.any(noise_var < 0):
        raise DomainError("Noise variance must be nonnegative")
    total = prior.var + noise_var
    mean = y + noise_var / total * (prior.mean - y)
    variance = prior.var * noise_var / total
    return np.broadcast_to(mean, y.shape).copy(), np.broadcast_to(variance, y.shape).copy()


def _check_spd(name: str, matrix: np.ndarray, dim: int) -> None:
    if matrix.shape != (dim, dim):
        raise ArgumentError(f"{name} must be {dim}x{dim}, got {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=1e-12):
        raise ArgumentError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as e:
        raise ArgumentError(f"{name} is not positive definite") from e


def verify_theorem1_dense(
    mean: npt.ArrayLike,
    prior_cov: npt.ArrayLike,
    noise_cov: npt.ArrayLike,
    noisy: npt.ArrayLike,
) -> float:
    """
    Compare the denoiser-residual score with the analytic smoothed score.

    For x ~ N(m, P) and x~ = x + n with n ~ N(0, S), the posterior mean is
    E[x | x~] = m + P (P + S)^-1 (x~ - m). The residual form
    S^-1 (E[x | x~] - x~) must equal -(P + S)^-1 (x~ - m).

    Returns:
        max |lhs - rhs| / max |rhs|, or 0.0 when both sides vanish

    Raises:
        ArgumentError: On shape mismatch, dimension above 64, or non-SPD input
    """
    m = np.asarray(mean, dtype=np.float64).ravel()
    x = np.asarray(noisy, dtype=np.float64).ravel()
    P = np.asarray(prior_cov, dtype=np.float64)
    S = np.asarray(noise_cov, dtype=np.float64)
    dim = m.size
    if dim < 1 or dim > 64:
        raise ArgumentError(f"Dense check supports 1..64 dimensions, got {dim}")
    if x.size != dim:
        raise ArgumentError("Noisy vector and mean differ in length")
    _check_spd("Prior covariance", P, dim)
    _check_spd("Noise covariance", S, dim)

    total = linalg.cho_factor(P + S)
    offset = x - m
    posterior_mean = m + P @ linalg.cho_solve(total, offset)
    lhs = linalg.cho_solve(linalg.cho_factor(S), posterior_mean - x)
    rhs = -linalg.cho_solve(total, offset)

    scale = np.max(np.abs(rhs))
    error = np.max(np.abs(lhs - rhs))
    if scale == 0.0:
        return float(error)
    return float(error / scale)


def expected_logp_gauss(
    mu: npt.ArrayLike, sigma2: npt.ArrayLike, mean: npt.ArrayLike, var: npt.ArrayLike
) -> np.ndarray:
    """
    Closed-form E_{x ~ N(mu, sigma2)} log p_sigma(x) for a Gaussian prior
    smoothed at level sigma2.
    """
    total = np.asarray(var) + np.asarray(sigma2)
    return -0.5 * (_LOG_2PI + np.log(total)) - ((np.asarray(mu) - mean) ** 2 + sigma2) / (
        2.0 * total
    )


def mc_expected_logp(
    mu: npt.ArrayLike,
    sigma2: npt.ArrayLike,
    prior: ScenePrior,
    samples: int,
    rng: np.random.Generator,
    smoothing_var: Optional[npt.ArrayLike] = None,
    chunk: int = 100_000,
) -> Tuple[float, float]:
    """
    Monte Carlo estimate of E_{x ~ N(mu, sigma2)} sum log p_s(x).

    The prior is smoothed at ``smoothing_var`` (default ``sigma2``), held
    fixed while sampling.

    Returns:
        (mean, standard error) over ``samples`` draws
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), mu.shape)
    if np.any(sigma2 <= 0):
        raise DomainError("mc_expected_logp needs strictly positive sigma2")
    level = sigma2 if smoothing_var is None else np.broadcast_to(smoothing_var, mu.shape)
    std = np.sqrt(sigma2)

    total = 0.0
    total_sq = 0.0
    drawn = 0
    while drawn < samples:
        batch = min(chunk, samples - drawn)
        x = mu + std * rng.standard_normal((batch,) + mu.shape)
        values = prior.smoothed_logpdf(x, level).reshape(batch, -1).sum(axis=1)
        total += float(values.sum())
        total_sq += float(np.sum(values**2))
        drawn += batch

    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    stderr = np.sqrt(var / max(samples - 1, 1))
    return mean, float(stderr)


def _floats(values: npt.ArrayLike) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values))


def write_sidecar(
    path: Union[str, Path],
    noise: NoiseModel,
    prior: Optional[ScenePrior] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write a ``key = value`` description of a synthetic pair.

    A non-iid variance map goes to ``<path>.varmap.sdvi`` next to the sidecar.
    """
    path = Path(path)
    lines = ["# scoredvi synthetic pair"]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    lines.append(f"noise.kind = {noise.kind}")
    lines.append(f"noise.sigma = {noise.sigma!r}")
    if noise.kind == "signal-dependent":
        lines.append(f"noise.a = {noise.a!r}")
        lines.append(f"noise.b = {noise.b!r}")
    if noise.kernel is not None:
        rows, cols = noise.kernel.shape
        lines.append(f"noise.kernel = {rows}x{cols}:{_floats(noise.kernel)}")
    if noise.var_map is not None:
        var_path = path.with_name(path.name + ".varmap.sdvi")
        write_tensor(var_path, noise.var_map)
        lines.append(f"noise.var_map = {var_path.name}")
    if prior is not None:
        lines.append(f"prior.kind = {prior.kind}")
        if prior.kind == "gauss":
            if np.ndim(prior.mean) == 0 and np.ndim(prior.var) == 0:
                lines.append(f"prior.mean = {float(prior.mean)!r}")
                lines.append(f"prior.var = {float(prior.var)!r}")
            else:
                shape = np.broadcast_shapes(np.shape(prior.mean), np.shape(prior.var))
                for key, value in (("mean", prior.mean), ("var", prior.var)):
                    tensor_path = path.with_name(f"{path.name}.prior_{key}.sdvi")
                    write_tensor(tensor_path, np.broadcast_to(value, shape))
                    lines.append(f"prior.{key}_file = {tensor_path.name}")
        else:
            lines.append(f"prior.weights = {_floats(prior.weights)}")
            lines.append(f"prior.means = {_floats(prior.means)}")
            lines.append(f"prior.variances = {_floats(prior.variances)}")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise ImageIOError(f"Cannot write sidecar {path}: {e}") from e


def read_sidecar(
    path: Union[str, Path]
) -> Tuple[NoiseModel, Optional[ScenePrior], Dict[str, str]]:
    """
    Parse a sidecar written by :func:`write_sidecar`.

    Returns:
        The noise model, the scene prior (if recorded) and the remaining entries
    """
    path = Path(path)
    entries = ScoreDVIConfig.parse_file(path)
    try:
        noise_kwargs: Dict[str, Any] = {
            "kind": entries.pop("noise.kind"),
            "sigma": float(entries.pop("noise.sigma", "0")),
            "a": float(entries.pop("noise.a", "0")),
            "b": float(entries.pop("noise.b", "0")),
        }
        kernel_text = entries.pop("noise.kernel", None)
        if kernel_text is not None:
            dims, values = kernel_text.split(":", 1)
            rows, cols = (int(v) for v in dims.split("x"))
            noise_kwargs["kernel"] = np.array(
                [float(v) for v in values.split(",")]
            ).reshape(rows, cols)
        var_name = entries.pop("noise.var_map", None)
        if var_name is not None:
            noise_kwargs["var_map"] = read_tensor(path.with_name(var_name))
        noise = NoiseModel(**noise_kwargs)

        prior = None
        prior_kind = entries.pop("prior.kind", None)
        if prior_kind == "gauss":
            values = {}
            for key in ("mean", "var"):
                tensor_name = entries.pop(f"prior.{key}_file", None)
                if tensor_name is not None:
                    values[key] = read_tensor(path.with_name(tensor_name))
                else:
                    values[key] = float(entries.pop(f"prior.{key}"))
            prior = ScenePrior(kind="gauss", **values)
        elif prior_kind == "gmm":
            prior = ScenePrior(
                kind="gmm",
                weights=_parse_floats(entries.pop("prior.weights")),
                means=_parse_floats(entries.pop("prior.means")),
                variances=_parse_floats(entries.pop("prior.variances")),
            )
    except (KeyError, ValueError) as e:
        raise ConfigError(f"Malformed sidecar {path}: {e}") from e
    return noise, prior, entries


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v.strip()])
