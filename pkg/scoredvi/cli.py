"""
ScoreDVI Command Line Interface

Provides the denoise, estimate-noise, synth, selftest and bench commands.
"""

import functools
import logging
from pathlib import Path
from typing import Optional

import click
import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .bench import denoise_with_config, run_bench, sweep
from .config import ScoreDVIConfig
from .core.image import load_image, save_image
from .core.tensorio import write_tensor
from .engine import LOG_HEADER
from .errors import (
    ArgumentError,
    ConfigError,
    DomainError,
    FormatError,
    ImageIOError,
    ScoreDVIError,
)
from .noise import estimate_delta, lambda_weight
from .selftest import SUITES, run_selftest
from .synth import NOISE_KINDS, SCENE_KINDS, NoiseModel, ScenePrior, add_noise, gen_clean, write_sidecar
from .utils.logger import setup_logger

logger = logging.getLogger(__name__)

USAGE_ERRORS = (ArgumentError, ConfigError, DomainError, FormatError, ImageIOError, ValidationError)

EXIT_FAILURE = 1
EXIT_USAGE = 2


def handle_errors(command):
    """Map scoredvi errors onto exit codes with the message on standard error."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except USAGE_ERRORS as e:
            click.echo(f"Error: {e}", err=True)
            ctx.exit(EXIT_USAGE)
        except ScoreDVIError as e:
            click.echo(f"Error: {e}", err=True)
            logger.debug("Command failed", exc_info=True)
            ctx.exit(EXIT_FAILURE)

    return wrapper


def _variance_path(output: str) -> Path:
    out = Path(output)
    return out.with_name(out.stem + ".var.sdvi")


def _loss_log_path(output: str) -> Path:
    out = Path(output)
    return out.with_name(out.stem + ".loss.csv")


@click.group()
@click.option("--debug", is_flag=True, help="Enable debug logging")
@click.pass_context
def cli(ctx, debug):
    """ScoreDVI - single-image denoising with a denoiser-derived prior."""
    ctx.ensure_object(dict)
    ctx.obj["debug"] = debug

    # Setup logging
    log_level = "DEBUG" if debug else "INFO"
    setup_logger(log_level=log_level)


@cli.command()
@click.option("--in", "in_path", help="Noisy input image (PNG/PGM/PPM)")
@click.option("--out", "out_path", help="Denoised output image")
@click.option("--config", "-c", "config_path", help="Path to configuration file")
@click.option("--seed", type=int, help="Monte Carlo seed (overrides config and environment)")
@click.option("--iters", type=int, help="Number of optimization iterations T")
@click.option("--K", "K", type=int, help="Number of mixture components")
@click.option("--M", "M", type=int, help="Monte Carlo samples per component")
@click.option("--gamma", type=float, help="Prior-assignment coefficient")
@click.option("--beta", help="Gamma hyperprior rate or preset (noisy, medium, low)")
@click.option("--oracle", help="Oracle spec broadcast to all components, e.g. 'gauss mean=0.5 var=0.01'")
@click.option("--backend", type=click.Choice(["direct", "conv"]), help="Parameter backend")
@click.option("--sigma2-grad", type=click.Choice(["chain", "printed"]), help="Variance score gradient mode")
@click.option("--log", "log_path", help="Per-iteration loss CSV (default: <out>.loss.csv)")
@click.option("--checkpoint", "checkpoint_path", help="Backend weight checkpoint to write")
@click.option("--resume", "resume_path", help="Checkpoint to load backend weights from")
@click.pass_context
@handle_errors
def denoise(
    ctx,
    in_path,
    out_path,
    config_path,
    seed,
    iters,
    K,
    M,
    gamma,
    beta,
    oracle,
    backend,
    sigma2_grad,
    log_path,
    checkpoint_path,
    resume_path,
):
    """Denoise one image."""
    required = ("K",) if config_path else ()
    config = ScoreDVIConfig.load(config_path, required=required)
    config = config.with_overrides(
        seed=seed,
        T=iters,
        K=K,
        M=M,
        gamma=gamma,
        beta=beta,
        oracle=oracle,
        backend=backend,
        sigma2_grad=sigma2_grad,
        input=in_path,
        output=out_path,
        log=log_path,
        checkpoint=checkpoint_path,
    )
    if config.logging.log_file or config.logging.level != "INFO":
        level = "DEBUG" if ctx.obj.get("debug") else config.logging.level
        setup_logger(log_level=level, log_file=config.logging.log_file)
    if not config.input:
        raise ArgumentError("No input image: pass --in or set 'input' in the config")
    if not config.output:
        raise ArgumentError("No output image: pass --out or set 'output' in the config")
    for issue in config.validate_configuration():
        logger.warning(issue)

    y = load_image(config.input)
    loss_log = config.log or _loss_log_path(config.output)
    result = denoise_with_config(
        y,
        config,
        log_path=loss_log,
        checkpoint_path=config.checkpoint,
        resume_path=resume_path,
    )

    save_image(result.mu_bar, config.output)
    var_path = _variance_path(config.output)
    write_tensor(var_path, result.sigma2_bar)

    click.echo(f"delta = {result.delta:.4f}")
    click.echo(f"lambda = {result.lam:g}")
    if result.history:
        click.echo(LOG_HEADER)
        click.echo(result.history[-1].as_row())
    click.echo(f"Wrote {config.output}, {var_path} and {loss_log}")


@cli.command("estimate-noise")
@click.option("--in", "in_path", required=True, help="Noisy input image")
@click.option("--l1", type=float, default=10.0, show_default=True, help="Lower noise threshold (0-255)")
@click.option("--l2", type=float, default=25.0, show_default=True, help="Upper noise threshold (0-255)")
@click.option("--gamma", type=float, default=2.0, show_default=True, help="Prior-assignment coefficient")
@handle_errors
def estimate_noise(in_path, l1, l2, gamma):
    """Estimate the noise level of an image and the resulting lambda."""
    y = load_image(in_path)
    estimate = estimate_delta(y)
    lam = lambda_weight(estimate.delta, l1, l2, gamma)
    click.echo(f"delta = {estimate.delta:.4f}")
    click.echo(f"lambda = {lam:g}")
    click.echo(f"patches = {estimate.patch_count}")


@cli.command()
@click.option("--out-dir", required=True, type=click.Path(file_okay=False), help="Directory for the pairs")
@click.option("--scene", type=click.Choice(SCENE_KINDS), default="smooth-random", show_default=True)
@click.option("--noise", type=click.Choice(NOISE_KINDS), default="awgn", show_default=True)
@click.option("--size", type=int, default=64, show_default=True, help="Image side length")
@click.option("--channels", type=int, default=1, show_default=True)
@click.option("--count", type=int, default=1, show_default=True, help="Number of pairs")
@click.option("--sigma", type=float, default=25.0, show_default=True, help="Noise std on the 0-255 scale")
@click.option("--value", type=float, default=0.5, show_default=True, help="Level of constant scenes")
@click.option("--a", "slope", type=float, default=0.01, show_default=True, help="Signal-dependent slope")
@click.option("--b", "offset", type=float, default=1e-4, show_default=True, help="Signal-dependent offset")
@click.option("--kernel-size", type=int, default=3, show_default=True, help="Box kernel side for correlated noise")
@click.option("--prior-var", type=float, help="Record a Gaussian prior centred on the clean scene")
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def synth(out_dir, scene, noise, size, channels, count, sigma, value, slope, offset, kernel_size, prior_var, seed):
    """Write synthetic clean/noisy pairs with a sidecar describing them."""
    if count < 1:
        raise ArgumentError("count must be at least 1")
    if kernel_size < 1:
        raise ArgumentError("kernel-size must be at least 1")
    directory = Path(out_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ImageIOError(f"Cannot create {directory}: {e}") from e

    std = sigma / 255.0
    for index in range(count):
        rng = np.random.default_rng([seed, index])
        clean = gen_clean(scene, size, rng, channels=channels, value=value)
        if noise == "non-iid":
            var_map = std**2 * rng.uniform(0.25, 1.75, clean.shape)
            model = NoiseModel(kind=noise, sigma=std, var_map=var_map)
        elif noise == "correlated":
            kernel = np.full((kernel_size, kernel_size), 1.0 / kernel_size**2)
            model = NoiseModel(kind=noise, sigma=std, kernel=kernel)
        elif noise == "signal-dependent":
            model = NoiseModel(kind=noise, a=slope, b=offset)
        else:
            model = NoiseModel(kind=noise, sigma=std)
        noisy = add_noise(clean, model, rng)

        name = f"{scene}-{noise}-{index:03d}"
        save_image(clean, directory / f"{name}_clean.png")
        save_image(noisy, directory / f"{name}_noisy.png")
        prior = ScenePrior(kind="gauss", mean=clean, var=prior_var) if prior_var else None
        write_sidecar(
            directory / f"{name}.txt",
            model,
            prior,
            extra={"scene": scene, "seed": seed, "index": index},
        )
        click.echo(f"Wrote {name}")


def _selftest_table(results) -> Table:
    table = Table(title="ScoreDVI self-test")
    table.add_column("Suite")
    table.add_column("Check")
    table.add_column("Value", justify="right")
    table.add_column("Threshold", justify="right")
    table.add_column("Result")
    for suite in results:
        for check in suite.checks:
            status = "[green]pass[/green]" if check.passed else "[red]FAIL[/red]"
            name = f"{check.name} ({check.detail})" if check.detail else check.name
            table.add_row(suite.name, name, f"{check.value:.3g}", f"{check.threshold:.3g}", status)
    return table


@cli.command()
@click.option(
    "--suite",
    "suites",
    multiple=True,
    type=click.Choice(list(SUITES)),
    help="Run only this suite (repeatable)",
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--sigma2-grad",
    type=click.Choice(["chain", "printed"]),
    default="chain",
    show_default=True,
    help="Variance score gradient mode checked by the score suite",
)
@click.pass_context
@handle_errors
def selftest(ctx, suites, seed, sigma2_grad):
    """Run the invariant suites; exit 0 iff every check passes."""
    results = run_selftest(suites or None, seed=seed, sigma2_grad=sigma2_grad)
    Console().print(_selftest_table(results))
    failed = [suite.name for suite in results if not suite.passed]
    for suite in results:
        click.echo(f"{suite.name}: {'pass' if suite.passed else 'FAIL'} ({suite.seconds:.1f} s)")
    if failed:
        click.echo(f"Failing suites: {', '.join(failed)}", err=True)
        ctx.exit(EXIT_FAILURE)


def _bench_table(reports) -> Table:
    table = Table(title="ScoreDVI benchmark")
    table.add_column("Setting")
    table.add_column("Images", justify="right")
    table.add_column("PSNR in", justify="right")
    table.add_column("PSNR out", justify="right")
    table.add_column("PSNR gain", justify="right")
    table.add_column("SSIM in", justify="right")
    table.add_column("SSIM out", justify="right")
    table.add_column("SSIM gain", justify="right")
    for report in reports:
        table.add_row(
            report.setting,
            str(len(report.rows)),
            f"{report.mean_psnr_in:.2f}",
            f"{report.mean_psnr_out:.2f}",
            f"{report.mean_psnr_gain:+.2f}",
            f"{report.mean_ssim_in:.4f}",
            f"{report.mean_ssim_out:.4f}",
            f"{report.mean_ssim_gain:+.4f}",
        )
    return table


def _parse_values(text: Optional[str], name: str):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ArgumentError(f"--{name} expects comma-separated numbers") from e


@cli.command()
@click.argument("directory", type=click.Path())
@click.option("--config", "-c", "config_path", help="Path to configuration file")
@click.option("--seed", type=int, help="Monte Carlo seed for every image")
@click.option("--iters", type=int, help="Number of optimization iterations T")
@click.option("--K", "K", type=int, help="Number of mixture components")
@click.option("--M", "M", type=int, help="Monte Carlo samples per component")
@click.option("--gamma", type=float, help="Prior-assignment coefficient")
@click.option("--beta", help="Gamma hyperprior rate or preset (noisy, medium, low)")
@click.option("--oracle", help="Oracle spec broadcast to all components")
@click.option("--backend", type=click.Choice(["direct", "conv"]), help="Parameter backend")
@click.option("--sigma2-grad", type=click.Choice(["chain", "printed"]), help="Variance score gradient mode")
@click.option("--workers", type=int, help="Images processed concurrently (default: physical CPUs)")
@click.option("--sidecar-prior", is_flag=True, help="Use the prior recorded in each sidecar as the oracle")
@click.option("--sweep-k", help="Comma-separated K values to compare")
@click.option("--sweep-gamma", help="Comma-separated gamma values to compare")
@handle_errors
def bench(
    directory,
    config_path,
    seed,
    iters,
    K,
    M,
    gamma,
    beta,
    oracle,
    backend,
    sigma2_grad,
    workers,
    sidecar_prior,
    sweep_k,
    sweep_gamma,
):
    """Denoise every clean/noisy pair in DIRECTORY and report mean PSNR/SSIM."""
    if sweep_k and sweep_gamma:
        raise ArgumentError("Use either --sweep-k or --sweep-gamma, not both")
    config = ScoreDVIConfig.load(config_path)
    config = config.with_overrides(
        seed=seed,
        T=iters,
        K=K,
        M=M,
        gamma=gamma,
        beta=beta,
        oracle=oracle,
        backend=backend,
        sigma2_grad=sigma2_grad,
    )

    k_values = _parse_values(sweep_k, "sweep-k")
    gamma_values = _parse_values(sweep_gamma, "sweep-gamma")
    if k_values is not None:
        reports = sweep(directory, config, "K", k_values, workers, sidecar_prior)
    elif gamma_values is not None:
        reports = sweep(directory, config, "gamma", gamma_values, workers, sidecar_prior)
    else:
        reports = [run_bench(directory, config, workers, sidecar_prior)]

    Console().print(_bench_table(reports))
    for report in reports:
        click.echo(
            f"{report.setting}: mean PSNR gain {report.mean_psnr_gain:+.3f} dB, "
            f"mean SSIM gain {report.mean_ssim_gain:+.4f}"
        )


def main():
    """Entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
