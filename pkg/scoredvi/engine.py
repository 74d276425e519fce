"""
ELBO Engine

Assembles the loss of the structured variational posterior, injects score
gradients from the denoiser oracles for the intractable prior expectation,
and runs the optimization loop that produces the fused denoised image.

Loss terms (all summed over components k and sites i = (c, h, w)):

    L1    likelihood     sum pi * l1_pointwise(y, mu, sigma2, alpha_hat, beta_hat)
    L2ent entropy part   -1/2 sum pi * log sigma2
    L3    precision KL   sum pi * KL(Gamma(alpha_hat, beta_hat) || Gamma(alpha, beta))
    L4    assignment KL  sum E_q KL(Cat(pi) || Cat(omega))
    L5    mixing KL      sum KL(Dir(dhat) || Dir(d))

The prior term is scaled by the noise-dependent weight lambda; its
expectation part contributes only through score gradients.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special as sp

from .config import ElboConfig
from .core.image import ImageTensor, as_image, check_same_shape
from .errors import ArgumentError, DomainError, NumericError, OracleError, RunAbortedError
from .noise import estimate_delta, lambda_weight
from .oracles.base import DenoiserOracle, score_from_denoiser
from .params.adam import Adam
from .params.backends import ParamBackend, create_backend
from .params.checkpoint import save_checkpoint
from .params.theta import Theta, ThetaGrad
from .special import expected_cat_dirichlet_kl, kl_dirichlet, kl_gamma, l1_pointwise

logger = logging.getLogger(__name__)

LOG_HEADER = "iter,L1,L2ent,L3,L4,L5,lambda,total"

OracleArg = Union[DenoiserOracle, Sequence[DenoiserOracle]]


@dataclass
class ElboBreakdown:
    """Loss values of one iteration; ``total`` is assembled, never set by hand."""

    iteration: int
    L1: float
    L2_entropy: float
    L3: float
    L4: float
    L5: float
    lam: float
    total: float = field(init=False)

    def __post_init__(self) -> None:
        self.total = self.L1 + self.lam * self.L2_entropy + self.L3 + self.L4 + self.L5

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite([self.L1, self.L2_entropy, self.L3, self.L4, self.L5, self.total]))
        )

    def as_row(self) -> str:
        values = (self.L1, self.L2_entropy, self.L3, self.L4, self.L5, self.lam, self.total)
        return f"{self.iteration}," + ",".join(f"{v:.10g}" for v in values)

    def summary(self) -> str:
        return (
            f"L1={self.L1:.6g} L2ent={self.L2_entropy:.6g} L3={self.L3:.6g} "
            f"L4={self.L4:.6g} L5={self.L5:.6g} lambda={self.lam:g} total={self.total:.6g}"
        )


@dataclass
class RunResult:
    """
    Outcome of :func:`run`.

    Attributes:
        mu_bar: Fused posterior mean, shape (C, H, W)
        sigma2_bar: Fused posterior variance, shape (C, H, W)
        pi: Final assignment probabilities, shape (K, C, H, W)
        delta: Noise level used for lambda (0-255 scale)
        lam: Prior-assignment weight for the run
        history: One breakdown per iteration
    """

    mu_bar: ImageTensor
    sigma2_bar: ImageTensor
    pi: np.ndarray
    delta: float
    lam: float
    history: List[ElboBreakdown]
    theta: Optional[Theta] = None


@dataclass
class ScoreGradients:
    """Gradients of E_q log p_sigma(x_k) with respect to mu_k and sigma2_k."""

    mu: np.ndarray
    sigma2: np.ndarray


def _finite(name: str, value: float) -> float:
    if not np.isfinite(value):
        raise NumericError(f"{name} is not finite")
    return float(value)


def compute_L1(theta: Theta, y: ImageTensor) -> Tuple[float, ThetaGrad]:
    """Expected negative log-likelihood and its gradients."""
    y = as_image(y)
    check_same_shape(theta.mu[0], y, "Theta and observation")
    pointwise = l1_pointwise(y, theta.mu, theta.sigma2, theta.alpha, theta.beta)
    value = _finite("L1", np.sum(theta.pi * pointwise))

    residual = theta.mu - y
    spread = residual**2 + theta.sigma2
    ratio = theta.alpha / theta.beta
    grad = ThetaGrad.zeros_like(theta)
    grad.mu = theta.pi * residual * ratio
    grad.sigma2 = theta.pi * ratio / 2.0
    grad.alpha = theta.pi * (spread / (2.0 * theta.beta) - sp.polygamma(1, theta.alpha) / 2.0)
    grad.beta = theta.pi * (
        -spread * theta.alpha / (2.0 * theta.beta**2) + 1.0 / (2.0 * theta.beta)
    )
    grad.pi = np.asarray(pointwise, dtype=np.float64)
    return value, grad


def l2_entropy_part(theta: Theta) -> Tuple[float, ThetaGrad]:
    """-1/2 sum pi log sigma2 and its gradients."""
    if not np.all(theta.sigma2 > 0):
        raise DomainError("Entropy part needs strictly positive sigma2")
    log_var = np.log(theta.sigma2)
    value = _finite("L2ent", -0.5 * np.sum(theta.pi * log_var))
    grad = ThetaGrad.zeros_like(theta)
    grad.sigma2 = -theta.pi / (2.0 * theta.sigma2)
    grad.pi = -0.5 * log_var
    return value, grad


def compute_L3(theta: Theta, alpha: float, beta: float) -> Tuple[float, ThetaGrad]:
    """pi-weighted KL between the precision posteriors and the Gamma hyperprior."""
    summand = np.asarray(kl_gamma(theta.alpha, theta.beta, alpha, beta))
    value = _finite("L3", np.sum(theta.pi * summand))
    grad = ThetaGrad.zeros_like(theta)
    grad.alpha = theta.pi * (
        (theta.alpha - alpha) * sp.polygamma(1, theta.alpha) + beta / theta.beta - 1.0
    )
    grad.beta = theta.pi * (alpha / theta.beta - theta.alpha * beta / theta.beta**2)
    grad.pi = summand
    return value, grad


def compute_L4(theta: Theta) -> Tuple[float, ThetaGrad]:
    """Expected KL between q(z) and p(z | omega) under q(omega)."""
    value = _finite("L4", np.sum(expected_cat_dirichlet_kl(theta.pi, theta.dhat, axis=0)))
    total = theta.dhat.sum(axis=0, keepdims=True)
    grad = ThetaGrad.zeros_like(theta)
    safe_pi = np.maximum(theta.pi, np.finfo(np.float64).tiny)
    grad.pi = np.log(safe_pi) + 1.0 - sp.psi(theta.dhat) + sp.psi(total)
    grad.dhat = -theta.pi * sp.polygamma(1, theta.dhat) + theta.pi.sum(
        axis=0, keepdims=True
    ) * sp.polygamma(1, total)
    return value, grad


def compute_L5(theta: Theta, d: np.ndarray) -> Tuple[float, ThetaGrad]:
    """KL between q(omega) = Dir(dhat) and the Dirichlet hyperprior Dir(d) per site."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 1:
        if d.size != theta.components:
            raise DomainError(f"d has {d.size} entries for {theta.components} components")
        d = d.reshape((-1,) + (1,) * (theta.dhat.ndim - 1))
    d = np.broadcast_to(d, theta.dhat.shape)
    value = _finite("L5", np.sum(kl_dirichlet(theta.dhat, d, axis=0)))
    total = theta.dhat.sum(axis=0, keepdims=True)
    excess = (theta.dhat - d).sum(axis=0, keepdims=True)
    grad = ThetaGrad.zeros_like(theta)
    grad.dhat = (theta.dhat - d) * sp.polygamma(1, theta.dhat) - sp.polygamma(1, total) * excess
    return value, grad


def fuse(theta: Theta) -> Tuple[ImageTensor, ImageTensor]:
    """Pixel-wise fusion: mu_bar = sum pi mu, sigma2_bar = sum pi^2 sigma2."""
    mu_bar = np.sum(theta.pi * theta.mu, axis=0)
    sigma2_bar = np.sum(theta.pi**2 * theta.sigma2, axis=0)
    return mu_bar, sigma2_bar


def _component_score(
    mu: np.ndarray,
    sigma2: np.ndarray,
    eps: np.ndarray,
    oracle: DenoiserOracle,
    mode: str,
) -> Tuple[np.ndarray, np.ndarray]:
    sigma = np.sqrt(sigma2)
    grad_mu = np.zeros_like(mu)
    grad_sigma2 = np.zeros_like(mu)
    for sample in eps:
        score = score_from_denoiser(mu + sigma * sample, sigma2, oracle)
        grad_mu += score
        grad_sigma2 += score * sample
    count = eps.shape[0]
    grad_mu /= count
    grad_sigma2 /= count
    if mode == "chain":
        grad_sigma2 = grad_sigma2 / (2.0 * sigma)
    return grad_mu, grad_sigma2


def score_grad_L2(
    theta: Theta,
    oracles: Sequence[DenoiserOracle],
    samples: int,
    rng: np.random.Generator,
    mode: str = "chain",
    executor: Optional[ThreadPoolExecutor] = None,
) -> ScoreGradients:
    """
    Monte Carlo gradients of E_q log p_sigma(x_k) for every component.

    For each k, x_m = mu_k + sigma_k * eps_m with fresh standard normal eps,
    and the denoiser residual at x_m gives the score. ``mode="chain"`` applies
    the 1/(2 sigma) factor of d x / d sigma2; ``"printed"`` leaves it out.

    All noise is drawn before any oracle call, in component order, so the
    result does not depend on whether ``executor`` is used.

    Raises:
        DomainError: If sigma2 is not strictly positive
        OracleError: Propagated from the oracles
    """
    if mode not in ("chain", "printed"):
        raise ArgumentError(f"Unknown sigma2 gradient mode: {mode}")
    if samples < 1:
        raise ArgumentError("Need at least one Monte Carlo sample")
    if len(oracles) != theta.components:
        raise ArgumentError(
            f"Expected {theta.components} oracles, got {len(oracles)}"
        )
    if not np.all(theta.sigma2 > 0):
        raise DomainError("Score gradients need strictly positive sigma2")

    shape = (samples,) + theta.image_shape
    noise = [rng.standard_normal(shape) for _ in range(theta.components)]
    jobs = [
        (theta.mu[k], theta.sigma2[k], noise[k], oracles[k], mode)
        for k in range(theta.components)
    ]
    if executor is not None:
        results = list(executor.map(lambda job: _component_score(*job), jobs))
    else:
        results = [_component_score(*job) for job in jobs]

    return ScoreGradients(
        mu=np.stack([r[0] for r in results]),
        sigma2=np.stack([r[1] for r in results]),
    )


def evaluate_elbo(
    theta: Theta, y: ImageTensor, config: ElboConfig, lam: float, iteration: int = 0
) -> Tuple[ElboBreakdown, ThetaGrad]:
    """All computable loss terms and the gradient of their lambda-weighted sum."""
    l1, grad = compute_L1(theta, y)
    ent, grad_ent = l2_entropy_part(theta)
    l3, grad3 = compute_L3(theta, config.alpha, config.beta)
    l4, grad4 = compute_L4(theta)
    l5, grad5 = compute_L5(theta, config.d_vector)
    grad.add_(grad_ent, scale=lam).add_(grad3).add_(grad4).add_(grad5)
    breakdown = ElboBreakdown(iteration=iteration, L1=l1, L2_entropy=ent, L3=l3, L4=l4, L5=l5, lam=lam)
    if not breakdown.is_finite():
        raise NumericError("Loss is not finite", iteration=iteration)
    return breakdown, grad


def _expand_oracles(oracles: OracleArg, components: int) -> List[DenoiserOracle]:
    if isinstance(oracles, DenoiserOracle):
        return [oracles] * components
    oracles = list(oracles)
    if len(oracles) == 1:
        return oracles * components
    if len(oracles) != components:
        raise ArgumentError(f"Expected 1 or {components} oracles, got {len(oracles)}")
    return oracles


def _open_log(path: Union[str, Path], delta: float, lam: float) -> IO[str]:
    handle = open(path, "w", encoding="utf-8")
    handle.write(f"# delta={delta:.6g} lambda={lam:g}\n")
    handle.write(LOG_HEADER + "\n")
    return handle


def run(
    y: ImageTensor,
    config: ElboConfig,
    oracles: OracleArg,
    backend: Optional[ParamBackend] = None,
    log_path: Optional[Union[str, Path]] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
) -> RunResult:
    """
    Optimize the variational posterior for ``y`` and fuse the result.

    The noise level is estimated once (unless ``config.delta`` is set) and
    lambda stays fixed for the run. Every iteration evaluates the loss at the
    current Theta, adds the lambda-scaled score gradients, backpropagates
    through the backend and takes one Adam step.

    Args:
        y: Noisy image (C, H, W) in [0, 1]
        config: Run settings
        oracles: One oracle for every component, or a single shared one
        backend: Parameter backend; a direct backend initialized at ``y`` by default
        log_path: Optional per-iteration loss CSV
        checkpoint_path: Optional weight checkpoint, written every
            ``config.checkpoint_every`` iterations and at the end

    Returns:
        RunResult with one breakdown per iteration

    Raises:
        RunAbortedError: If an oracle or numeric error stops the loop
    """
    y = as_image(y)
    components = config.K
    oracle_list = _expand_oracles(oracles, components)

    if config.delta is not None:
        delta = float(config.delta)
    else:
        delta = estimate_delta(y).delta
    lam = lambda_weight(delta, config.l1, config.l2, config.gamma)
    logger.info(f"Noise level delta={delta:.3f} (0-255 scale), lambda={lam:g}")

    if backend is None:
        backend = create_backend("direct", components, y)
    if backend.components != components:
        raise ArgumentError(
            f"Backend has {backend.components} components, config K={components}"
        )

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(lr=config.lr)
    concurrent = config.workers > 1 and all(o.concurrent_safe for o in oracle_list)
    if config.workers > 1 and not concurrent:
        logger.info("Oracles are not all concurrent-safe; dispatching serially")
    executor = ThreadPoolExecutor(max_workers=config.workers) if concurrent else None
    log_handle = _open_log(log_path, delta, lam) if log_path else None

    history: List[ElboBreakdown] = []
    last: Optional[ElboBreakdown] = None
    try:
        for iteration in range(config.T):
            try:
                theta = backend.forward(y)
                breakdown, grad = evaluate_elbo(theta, y, config, lam, iteration)
                score = score_grad_L2(
                    theta, oracle_list, config.M, rng, config.sigma2_grad, executor
                )
                grad.mu -= lam * theta.pi * score.mu
                grad.sigma2 -= lam * theta.pi * score.sigma2
                param_grads = backend.backward(grad, iteration=iteration)
                optimizer.step(backend.parameters(), param_grads)
            except (OracleError, NumericError, DomainError) as e:
                raise RunAbortedError(str(e), iteration=iteration, last_breakdown=last) from e

            history.append(breakdown)
            last = breakdown
            logger.debug(f"iter {iteration}: {breakdown.summary()}")
            if config.log_every and (iteration + 1) % config.log_every == 0:
                logger.info(f"iter {iteration + 1}/{config.T}: {breakdown.summary()}")
            if log_handle is not None:
                log_handle.write(breakdown.as_row() + "\n")
            if (
                checkpoint_path
                and config.checkpoint_every
                and (iteration + 1) % config.checkpoint_every == 0
            ):
                save_checkpoint(checkpoint_path, backend.parameters())
    finally:
        if executor is not None:
            executor.shutdown()
        if log_handle is not None:
            log_handle.close()

    theta = backend.forward(y)
    mu_bar, sigma2_bar = fuse(theta)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, backend.parameters())
    if last is not None:
        logger.info(f"Finished {config.T} iterations: {last.summary()}")
    return RunResult(
        mu_bar=mu_bar,
        sigma2_bar=sigma2_bar,
        pi=theta.pi.copy(),
        delta=delta,
        lam=lam,
        history=history,
        theta=theta,
    )
