"""
Directory Benchmark

Runs the denoiser over a directory of clean/noisy pairs and reports PSNR and
SSIM before and after, optionally sweeping the number of components or the
prior-assignment coefficient. Used by ``scoredvi bench``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import psutil

from .config import ScoreDVIConfig
from .core.image import ImageTensor, check_same_shape, load_image
from .core.metrics import psnr, ssim
from .engine import RunResult, run
from .errors import ArgumentError
from .oracles.base import DenoiserOracle
from .params.backends import create_backend
from .params.checkpoint import load_checkpoint
from .synth import NoiseModel, ScenePrior, read_sidecar

logger = logging.getLogger(__name__)

CLEAN_SUFFIX = "_clean.png"
NOISY_SUFFIX = "_noisy.png"
SIDECAR_SUFFIX = ".txt"


def denoise_with_config(
    y: ImageTensor,
    config: ScoreDVIConfig,
    oracles: Optional[Sequence[DenoiserOracle]] = None,
    log_path: Optional[Union[str, Path]] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
    resume_path: Optional[Union[str, Path]] = None,
) -> RunResult:
    """
    Build the backend and oracles named by ``config`` and run the engine on ``y``.

    ``resume_path`` names a checkpoint whose weights replace the fresh
    backend initialization.
    """
    backend = create_backend(
        config.backend.kind,
        config.elbo.K,
        y,
        width=config.backend.channels,
        seed=config.backend.init_seed,
    )
    if resume_path is not None:
        load_checkpoint(resume_path, backend.parameters())
        logger.info(f"Resumed backend weights from {resume_path}")
    if oracles is None:
        oracles = config.build_oracles()
    return run(
        y,
        config.elbo,
        list(oracles),
        backend=backend,
        log_path=log_path,
        checkpoint_path=checkpoint_path,
    )


@dataclass
class BenchPair:
    name: str
    clean: Path
    noisy: Path
    sidecar: Optional[Path] = None


@dataclass
class BenchRow:
    """Scores of one image under one setting."""

    name: str
    psnr_in: float
    psnr_out: float
    ssim_in: float
    ssim_out: float
    delta: float
    lam: float
    noise: Optional[NoiseModel] = None

    @property
    def psnr_gain(self) -> float:
        return self.psnr_out - self.psnr_in

    @property
    def ssim_gain(self) -> float:
        return self.ssim_out - self.ssim_in


@dataclass
class BenchReport:
    """All rows of one setting (a K or gamma value, or the base config)."""

    setting: str
    rows: List[BenchRow] = field(default_factory=list)

    @property
    def mean_psnr_in(self) -> float:
        return float(np.mean([r.psnr_in for r in self.rows]))

    @property
    def mean_psnr_out(self) -> float:
        return float(np.mean([r.psnr_out for r in self.rows]))

    @property
    def mean_ssim_in(self) -> float:
        return float(np.mean([r.ssim_in for r in self.rows]))

    @property
    def mean_ssim_out(self) -> float:
        return float(np.mean([r.ssim_out for r in self.rows]))

    @property
    def mean_psnr_gain(self) -> float:
        return float(np.mean([r.psnr_gain for r in self.rows]))

    @property
    def mean_ssim_gain(self) -> float:
        return float(np.mean([r.ssim_gain for r in self.rows]))


def discover_pairs(directory: Union[str, Path]) -> List[BenchPair]:
    """
    Find ``<name>_clean.png`` / ``<name>_noisy.png`` pairs, with an optional
    ``<name>.txt`` sidecar, sorted by name.

    Raises:
        ArgumentError: If the directory does not exist or holds no pairs
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ArgumentError(f"Not a directory: {directory}")

    pairs = []
    for clean in sorted(directory.glob(f"*{CLEAN_SUFFIX}")):
        name = clean.name[: -len(CLEAN_SUFFIX)]
        noisy = directory / f"{name}{NOISY_SUFFIX}"
        if not noisy.exists():
            logger.warning(f"Skipping {clean.name}: no matching {noisy.name}")
            continue
        sidecar = directory / f"{name}{SIDECAR_SUFFIX}"
        pairs.append(BenchPair(name, clean, noisy, sidecar if sidecar.exists() else None))

    if not pairs:
        raise ArgumentError(f"No clean/noisy image pairs found in {directory}")
    return pairs


def _bench_one(
    pair: BenchPair, config: ScoreDVIConfig, use_sidecar_prior: bool
) -> BenchRow:
    clean = load_image(pair.clean)
    noisy = load_image(pair.noisy)
    check_same_shape(clean, noisy, f"pair {pair.name}")

    noise: Optional[NoiseModel] = None
    prior: Optional[ScenePrior] = None
    if pair.sidecar is not None:
        noise, prior, _ = read_sidecar(pair.sidecar)

    oracles = None
    if use_sidecar_prior and prior is not None:
        oracles = [prior.oracle()] * config.elbo.K

    result = denoise_with_config(noisy, config, oracles=oracles)
    row = BenchRow(
        name=pair.name,
        psnr_in=psnr(noisy, clean),
        psnr_out=psnr(result.mu_bar, clean),
        ssim_in=ssim(noisy, clean),
        ssim_out=ssim(result.mu_bar, clean),
        delta=result.delta,
        lam=result.lam,
        noise=noise,
    )
    logger.info(
        f"{pair.name}: PSNR {row.psnr_in:.2f} -> {row.psnr_out:.2f} dB, "
        f"SSIM {row.ssim_in:.4f} -> {row.ssim_out:.4f}"
    )
    return row


def run_bench(
    directory: Union[str, Path],
    config: ScoreDVIConfig,
    workers: Optional[int] = None,
    use_sidecar_prior: bool = False,
    setting: str = "base",
) -> BenchReport:
    """
    Denoise every pair in ``directory`` with ``config``.

    Every image gets its own engine instance and the config seed, so rows do
    not depend on the worker count.

    Args:
        directory: Directory of image pairs
        config: Run configuration shared by all images
        workers: Concurrent images; defaults to the physical CPU count
        use_sidecar_prior: Use the scene prior recorded in each sidecar as
            the oracle instead of the configured one
        setting: Label of this run in the report
    """
    pairs = discover_pairs(directory)
    if workers is None:
        workers = psutil.cpu_count(logical=False) or 1
    if workers < 1:
        raise ArgumentError("workers must be at least 1")
    workers = min(workers, len(pairs))
    logger.info(f"Benchmarking {len(pairs)} pair(s) [{setting}] with {workers} worker(s)")

    if workers == 1:
        rows = [_bench_one(pair, config, use_sidecar_prior) for pair in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(
                executor.map(lambda p: _bench_one(p, config, use_sidecar_prior), pairs)
            )
    return BenchReport(setting=setting, rows=rows)


def sweep(
    directory: Union[str, Path],
    config: ScoreDVIConfig,
    parameter: str,
    values: Sequence[float],
    workers: Optional[int] = None,
    use_sidecar_prior: bool = False,
) -> List[BenchReport]:
    """
    Repeat :func:`run_bench` for each value of ``K`` or ``gamma``.

    Raises:
        ArgumentError: If the parameter cannot be swept or no values are given
    """
    if parameter not in ("K", "gamma"):
        raise ArgumentError(f"Cannot sweep {parameter}; use K or gamma")
    if not values:
        raise ArgumentError(f"No values given for the {parameter} sweep")

    reports = []
    for value in values:
        overrides: Dict[str, object] = {parameter: int(value) if parameter == "K" else float(value)}
        if parameter == "K" and config.elbo.d is not None:
            overrides["d"] = [config.elbo.d[0]] * int(value)
        swept = config.with_overrides(**overrides)
        reports.append(
            run_bench(
                directory,
                swept,
                workers=workers,
                use_sidecar_prior=use_sidecar_prior,
                setting=f"{parameter}={value:g}",
            )
        )
    return reports
