"""
Self-Test Suites

Invariant checks that can run on any installation without test tooling:
the dense denoiser-score identity, finite-difference checks of every analytic
gradient, score-gradient arbitration against closed forms, closed-form
divergences against Monte Carlo, fusion bounds and noise-estimator
calibration. Used by ``scoredvi selftest``.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
from scipy import special as sp

from .config import ElboConfig
from .engine import (
    compute_L1,
    compute_L3,
    compute_L4,
    compute_L5,
    fuse,
    l2_entropy_part,
    score_grad_L2,
)
from .errors import ArgumentError
from .noise import estimate_delta, lambda_weight
from .oracles.analytic import GaussPriorOracle
from .params.backends import ConvBackend
from .params.layers import AvgPool2, Conv2d, Layer, LeakyReLU, Upsample2
from .params.theta import Theta, ThetaGrad, heads_to_theta
from .special import expected_cat_dirichlet_kl, kl_dirichlet, kl_gamma, l1_pointwise
from .synth import gen_clean, verify_theorem1_dense

logger = logging.getLogger(__name__)

FD_STEP = 1e-4
LOSS_FD_TOL = 1e-5
LAYER_FD_TOL = 1e-3
# small enough that a perturbed weight rarely moves a unit across the rectifier kink
BACKEND_FD_STEP = 1e-6
MC_SIGMAS = 3.0
# draws per closed form allowed beyond MC_SIGMAS
MC_OUTLIERS = 2


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    checks: List[CheckResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def add(self, name: str, value: float, threshold: float, detail: str = "") -> None:
        passed = bool(np.isfinite(value) and value <= threshold)
        self.checks.append(CheckResult(name, float(value), threshold, passed, detail))


def relative_error(numeric: np.ndarray, analytic: np.ndarray) -> float:
    """Norm-wise relative difference of two gradient arrays."""
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-300)
    return float(np.linalg.norm(numeric - analytic) / scale)


def central_difference(
    fn: Callable[[], float], array: np.ndarray, step: float = FD_STEP, indices=None
) -> np.ndarray:
    """
    Central finite differences of ``fn`` with respect to entries of ``array``,
    which ``fn`` must read on every call. Entries outside ``indices`` stay 0.
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    grad_flat = grad.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        original = flat[i]
        flat[i] = original + step
        upper = fn()
        flat[i] = original - step
        lower = fn()
        flat[i] = original
        grad_flat[i] = (upper - lower) / (2.0 * step)
    return grad


def random_theta(
    rng: np.random.Generator, components: int = 2, shape=(1, 4, 4)
) -> Theta:
    """Theta with well-conditioned random entries (no values near the floors)."""
    full = (components,) + tuple(shape)
    return Theta(
        mu=rng.uniform(0.0, 1.0, full),
        sigma2=rng.uniform(0.05, 0.5, full),
        alpha=rng.uniform(0.5, 3.0, full),
        beta=rng.uniform(0.3, 1.0, full),
        pi=sp.softmax(rng.standard_normal(full), axis=0),
        dhat=rng.uniform(0.5, 3.0, full),
    )


# -- theorem1 ---------------------------------------------------------------


def _random_spd(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return a @ a.T / dim + 0.5 * np.eye(dim)


def suite_theorem1(rng: np.random.Generator, mode: str) -> SuiteResult:
    result = SuiteResult("theorem1")
    for dim in (4, 16, 64):
        worst = 0.0
        for _ in range(100):
            m = rng.standard_normal(dim)
            x = m + rng.standard_normal(dim)
            worst = max(
                worst,
                verify_theorem1_dense(m, _random_spd(rng, dim), _random_spd(rng, dim), x),
            )
        result.add(f"dense dim={dim}", worst, 1e-8)

    # diagonal case against the elementwise residual formula
    dim = 16
    s2 = rng.uniform(0.01, 1.0, dim)
    v = rng.uniform(0.01, 1.0, dim)
    m = rng.standard_normal(dim)
    x = m + rng.standard_normal(dim)
    oracle = GaussPriorOracle(m.reshape(1, 1, dim), s2.reshape(1, 1, dim))
    residual = (oracle.denoise(x.reshape(1, 1, dim), v.reshape(1, 1, dim)).ravel() - x) / v
    exact = -(x - m) / (s2 + v)
    result.add("diagonal residual", relative_error(residual, exact), 1e-10)
    result.add(
        "diagonal dense",
        verify_theorem1_dense(m, np.diag(s2), np.diag(v), x),
        1e-10,
    )
    return result


# -- gradients --------------------------------------------------------------


def _loss_checks(result: SuiteResult, rng: np.random.Generator) -> None:
    theta = random_theta(rng)
    y = rng.uniform(0.0, 1.0, theta.image_shape)
    config = ElboConfig(K=2, alpha=1.3, beta=0.4, d=[1.0, 2.0])

    terms: Dict[str, Callable[[], tuple]] = {
        "L1": lambda: compute_L1(theta, y),
        "L2ent": lambda: l2_entropy_part(theta),
        "L3": lambda: compute_L3(theta, config.alpha, config.beta),
        "L5": lambda: compute_L5(theta, config.d_vector),
    }
    for term, evaluate in terms.items():
        _, grad = evaluate()
        for name, analytic in grad.items():
            if not np.any(analytic):
                continue
            numeric = central_difference(lambda: evaluate()[0], getattr(theta, name))
            result.add(f"{term} d/d{name}", relative_error(numeric, analytic), LOSS_FD_TOL)

    # L4 needs pi on the simplex, so differentiate through the logits
    logits = rng.standard_normal(theta.pi.shape)

    def l4_at_logits() -> float:
        theta.pi = sp.softmax(logits, axis=0)
        return compute_L4(theta)[0]

    l4_at_logits()
    _, grad = compute_L4(theta)
    pi = theta.pi
    analytic = pi * (grad.pi - np.sum(pi * grad.pi, axis=0, keepdims=True))
    numeric = central_difference(l4_at_logits, logits)
    result.add("L4 d/dlogits", relative_error(numeric, analytic), LOSS_FD_TOL)
    l4_at_logits()
    numeric = central_difference(lambda: compute_L4(theta)[0], theta.dhat)
    result.add("L4 d/ddhat", relative_error(numeric, grad.dhat), LOSS_FD_TOL)


def _layer_check(result: SuiteResult, name: str, layer: Layer, x: np.ndarray, rng) -> None:
    weights = rng.standard_normal(layer.forward(x).shape)

    def loss() -> float:
        return float(np.sum(weights * layer.forward(x)))

    layer.forward(x)
    grad_x = layer.backward(weights)
    param_grads = {k: v.copy() for k, v in layer.gradients().items()}
    result.add(f"{name} input", relative_error(central_difference(loss, x), grad_x), LAYER_FD_TOL)
    for key, value in layer.parameters().items():
        numeric = central_difference(loss, value)
        result.add(f"{name} {key}", relative_error(numeric, param_grads[key]), LAYER_FD_TOL)


def _backend_check(result: SuiteResult, rng: np.random.Generator) -> None:
    y = rng.uniform(0.0, 1.0, (1, 8, 8))
    backend = ConvBackend(2, y.shape, width=4, seed=int(rng.integers(1 << 31)))
    weights = {name: rng.standard_normal((2,) + y.shape) for name in ThetaGrad.__dataclass_fields__}

    def loss() -> float:
        theta = backend.forward(y)
        return float(sum(np.sum(weights[name] * value) for name, value in theta.items()))

    backend.forward(y)
    grads = backend.backward(ThetaGrad(**weights))
    grads = {k: v.copy() for k, v in grads.items()}
    worst = 0.0
    for name, value in backend.parameters().items():
        picks = rng.choice(value.size, size=min(4, value.size), replace=False)
        numeric = central_difference(loss, value, step=BACKEND_FD_STEP, indices=picks)
        worst = max(
            worst,
            relative_error(numeric.reshape(-1)[picks], grads[name].reshape(-1)[picks]),
        )
    result.add("conv backend weights", worst, LAYER_FD_TOL)


def suite_gradients(rng: np.random.Generator, mode: str) -> SuiteResult:
    result = SuiteResult("gradients")
    _loss_checks(result, rng)
    _layer_check(result, "conv2d", Conv2d(2, 3, rng=rng), rng.standard_normal((2, 5, 6)), rng)
    away_from_kink = rng.choice([-1.0, 1.0], (2, 5, 6)) * rng.uniform(0.1, 2.0, (2, 5, 6))
    _layer_check(result, "leaky-relu", LeakyReLU(0.1), away_from_kink, rng)
    _layer_check(result, "avg-pool", AvgPool2(), rng.standard_normal((2, 5, 6)), rng)
    upsample = Upsample2()
    upsample.set_output_size(7, 9)
    _layer_check(result, "upsample", upsample, rng.standard_normal((2, 3, 4)), rng)
    _backend_check(result, rng)
    return result


# -- score ------------------------------------------------------------------


def suite_score(rng: np.random.Generator, mode: str, configs: int = 100, samples: int = 100_000) -> SuiteResult:
    """
    Score gradients from a Gaussian-prior oracle against closed forms.

    Each pixel of a 1 x 1 x ``configs`` image is one random scalar
    configuration, at least two posterior std away from the prior mean.
    """
    result = SuiteResult("score")
    shape = (1, 1, configs)
    m = rng.uniform(0.2, 0.8, shape)
    s2 = rng.uniform(0.005, 0.05, shape)
    sigma2 = rng.uniform(0.001, 0.02, shape)
    sigma = np.sqrt(sigma2)
    mu = m + rng.choice([-1.0, 1.0], shape) * rng.uniform(2.0, 4.0, shape) * sigma

    ones = np.ones((1,) + shape)
    theta = Theta(
        mu=mu[np.newaxis], sigma2=sigma2[np.newaxis], alpha=ones, beta=ones, pi=ones, dhat=ones
    )
    oracle = GaussPriorOracle(m, s2)
    seed = int(rng.integers(1 << 31))
    chain = score_grad_L2(theta, [oracle], samples, np.random.default_rng(seed), "chain")
    printed = score_grad_L2(theta, [oracle], samples, np.random.default_rng(seed), "printed")
    used = chain if mode == "chain" else printed

    exact_mu = -(mu - m) / (s2 + sigma2)
    result.add(
        "mu gradient (max relative)",
        float(np.max(np.abs(used.mu[0] - exact_mu) / np.abs(exact_mu))),
        0.01,
    )

    factor = printed.sigma2[0] / (2.0 * sigma * chain.sigma2[0])
    result.add("printed/chain = 2 sigma", float(np.max(np.abs(factor - 1.0))), 1e-10)

    # smoothing level held fixed: d/dsigma2 E log p_s = -1 / (2 (s2 + s))
    exact_sigma2 = -1.0 / (2.0 * (s2 + sigma2))
    ratio = used.sigma2[0] / exact_sigma2
    result.add(
        "sigma2 gradient (mean relative)",
        float(abs(np.mean(ratio) - 1.0)),
        0.02,
        detail=f"mean ratio to reference {np.mean(ratio):.4g}, "
        f"mean ratio / 2 sigma {np.mean(ratio / (2.0 * sigma)):.4g}",
    )
    return result


# -- kl-mc ------------------------------------------------------------------


def _standard_errors(exact: float, samples: np.ndarray) -> float:
    """Distance of the Monte Carlo mean from ``exact`` in standard errors."""
    mean = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / np.sqrt(samples.size))
    return abs(mean - exact) / max(stderr, 1e-300)


def _mc_summary(result: SuiteResult, name: str, z: List[float]) -> None:
    z = np.asarray(z)
    outside = int(np.sum(~(z <= MC_SIGMAS)))
    result.add(
        f"{name} draws beyond {MC_SIGMAS:g} SE",
        float(outside),
        float(MC_OUTLIERS),
        detail=f"{outside}/{z.size} draws, worst {np.max(z):.2f} SE",
    )


def suite_kl_mc(rng: np.random.Generator, mode: str, draws: int = 50, samples: int = 1_000_000) -> SuiteResult:
    """
    Closed-form divergences against Monte Carlo means over random parameter draws.

    Each closed form gets one check: the number of draws whose Monte Carlo mean
    lies more than MC_SIGMAS standard errors away must not exceed MC_OUTLIERS.
    """
    result = SuiteResult("kl-mc")
    z: Dict[str, List[float]] = {
        "kl_gamma": [],
        "kl_dirichlet": [],
        "expected_cat_dirichlet_kl": [],
        "l1_pointwise": [],
    }
    for _ in range(draws):
        a_hat, b_hat, a, b = rng.uniform(0.5, 4.0, 4)
        phi = rng.gamma(a_hat, 1.0 / b_hat, samples)
        log_q = a_hat * np.log(b_hat) - sp.gammaln(a_hat) + (a_hat - 1) * np.log(phi) - b_hat * phi
        log_p = a * np.log(b) - sp.gammaln(a) + (a - 1) * np.log(phi) - b * phi
        z["kl_gamma"].append(_standard_errors(kl_gamma(a_hat, b_hat, a, b), log_q - log_p))

        k = int(rng.integers(2, 5))
        d_hat = rng.uniform(0.5, 4.0, k)
        d = rng.uniform(0.5, 4.0, k)
        omega = np.maximum(rng.dirichlet(d_hat, samples), 1e-300)

        def log_dir(conc: np.ndarray) -> np.ndarray:
            return sp.gammaln(conc.sum()) - sp.gammaln(conc).sum() + np.log(omega) @ (conc - 1)

        z["kl_dirichlet"].append(
            _standard_errors(kl_dirichlet(d_hat, d), log_dir(d_hat) - log_dir(d))
        )

        pi = rng.dirichlet(np.ones(k))
        picked_z = rng.choice(k, size=samples, p=pi)
        picked = omega[np.arange(samples), picked_z]
        z["expected_cat_dirichlet_kl"].append(
            _standard_errors(
                expected_cat_dirichlet_kl(pi, d_hat), np.log(pi[picked_z]) - np.log(picked)
            )
        )

        y, mu = rng.uniform(0.0, 1.0, 2)
        sigma2 = rng.uniform(0.001, 0.1)
        phi = rng.gamma(a_hat, 1.0 / b_hat, samples)
        x = mu + np.sqrt(sigma2) * rng.standard_normal(samples)
        z["l1_pointwise"].append(
            _standard_errors(
                l1_pointwise(y, mu, sigma2, a_hat, b_hat),
                0.5 * phi * (y - x) ** 2 - 0.5 * np.log(phi),
            )
        )
    for name, values in z.items():
        _mc_summary(result, name, values)
    return result


# -- fusion -----------------------------------------------------------------


def suite_fusion(rng: np.random.Generator, mode: str, trials: int = 1000) -> SuiteResult:
    result = SuiteResult("fusion")
    worst_bound = 0.0
    worst_single = 0.0
    for _ in range(trials):
        k = int(rng.integers(1, 5))
        heads = {name: rng.standard_normal((k, 1, 3, 3)) * 3.0 for name in ThetaGrad.__dataclass_fields__}
        theta = heads_to_theta(heads)
        mu_bar, sigma2_bar = fuse(theta)
        below = theta.mu.min(axis=0) - mu_bar
        above = mu_bar - theta.mu.max(axis=0)
        worst_bound = max(worst_bound, float(np.max(below)), float(np.max(above)), float(-np.min(sigma2_bar)))

        selected = int(rng.integers(k))
        theta.pi = np.zeros_like(theta.pi)
        theta.pi[selected] = 1.0
        one_hot, _ = fuse(theta)
        worst_single = max(worst_single, float(np.max(np.abs(one_hot - theta.mu[selected]))))
    result.add("convex bounds violation", max(worst_bound, 0.0), 1e-12)
    result.add("one-hot selection error", worst_single, 0.0)
    return result


# -- noise ------------------------------------------------------------------


def suite_noise(rng: np.random.Generator, mode: str, trials: int = 20) -> SuiteResult:
    result = SuiteResult("noise")
    for level, expected in ((5.0, 0.5), (15.0, 1.0), (40.0, 2.0)):
        hits = 0
        for _ in range(trials):
            y = gen_clean("constant", 64) + level / 255.0 * rng.standard_normal((1, 64, 64))
            hits += lambda_weight(estimate_delta(y).delta) == expected
        result.add(
            f"lambda at sigma={level:g}",
            float(trials - hits),
            float(trials - int(np.ceil(0.9 * trials))),
            detail=f"{hits}/{trials} trials gave lambda={expected:g}",
        )
    result.add("boundary delta=l1", abs(lambda_weight(10.0) - 1.0), 0.0)
    result.add("boundary delta=l2", abs(lambda_weight(25.0) - 2.0), 0.0)
    return result


SUITES: Dict[str, Callable[[np.random.Generator, str], SuiteResult]] = {
    "theorem1": suite_theorem1,
    "gradients": suite_gradients,
    "score": suite_score,
    "kl-mc": suite_kl_mc,
    "fusion": suite_fusion,
    "noise": suite_noise,
}


def run_selftest(
    suites: Optional[Iterable[str]] = None, seed: int = 0, sigma2_grad: str = "chain"
) -> List[SuiteResult]:
    """
    Run the named suites (all by default) with independent seeded streams.

    Raises:
        ArgumentError: If a suite name is unknown
    """
    names = list(suites) if suites else list(SUITES)
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ArgumentError(f"Unknown selftest suite(s): {', '.join(unknown)}")

    results = []
    for name in names:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        start = time.perf_counter()
        suite = SUITES[name](rng, sigma2_grad)
        suite.seconds = time.perf_counter() - start
        logger.info(f"Suite {name}: {'pass' if suite.passed else 'FAIL'} in {suite.seconds:.1f} s")
        results.append(suite)
    return results
