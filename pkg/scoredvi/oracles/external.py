"""
External Denoiser Oracle

Runs a user-supplied denoiser as a subprocess. The command template holds
``{in}``, ``{out}`` and ``{nv}`` placeholders for the noisy tensor, the output
tensor and the noise-variance map, all exchanged in SDVI1 format. Exit code 0
means success.
"""

import logging
import shlex
import subprocess
import tempfile
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from tenacity import (
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from ..core.image import ImageTensor
from ..core.tensorio import read_tensor, write_tensor
from ..errors import ArgumentError, ConfigError, FormatError, ImageIOError, OracleError
from .base import DenoiserOracle

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0
DEFAULT_SIGMA_RANGE = (1.0 / 255.0, 100.0 / 255.0)
_PLACEHOLDERS = ("{in}", "{out}", "{nv}")


class ExternalTimeout(OracleError):
    """Raised when the external denoiser exceeds its timeout."""

    pass


class ExternalOracle(DenoiserOracle):
    """
    Denoiser backed by an external command.

    Not concurrent-safe by default; the engine serializes calls to it.
    """

    name = "external"

    def __init__(
        self,
        command_template: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = 1,
        validity_range: Optional[Tuple[float, float]] = DEFAULT_SIGMA_RANGE,
        concurrent_safe: bool = False,
    ):
        missing = [p for p in _PLACEHOLDERS if p not in command_template]
        if missing:
            raise ArgumentError(
                f"Command template is missing placeholders: {', '.join(missing)}"
            )
        if retries < 1:
            raise ArgumentError("retries must be at least 1")
        self.command_template = command_template
        self.timeout = timeout
        self.retries = retries
        self.validity_range = validity_range
        self.concurrent_safe = concurrent_safe
        self._build_command(Path("in"), Path("out"), Path("nv"))

    def _build_command(self, in_path: Path, out_path: Path, nv_path: Path) -> str:
        # literal braces must be doubled, as in str.format
        try:
            return self.command_template.format(
                **{
                    "in": shlex.quote(str(in_path)),
                    "out": shlex.quote(str(out_path)),
                    "nv": shlex.quote(str(nv_path)),
                }
            )
        except (KeyError, IndexError, ValueError) as e:
            raise ConfigError(
                f"Cannot expand command template {self.command_template!r}: {e!r}",
                key="oracle.command",
            ) from e

    def _run(self, command: str) -> subprocess.CompletedProcess:
        @retry(
            stop=stop_after_attempt(self.retries),
            wait=wait_exponential(multiplier=1, min=1, max=10),
            retry=retry_if_exception_type(ExternalTimeout),
            reraise=True,
        )
        def attempt() -> subprocess.CompletedProcess:
            logger.debug(f"Running external denoiser: {command}")
            try:
                return subprocess.run(
                    shlex.split(command),
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                    check=False,
                )
            except subprocess.TimeoutExpired as e:
                stderr = e.stderr if isinstance(e.stderr, str) else ""
                raise ExternalTimeout(
                    f"External denoiser timed out after {self.timeout} s",
                    stderr=stderr or "",
                    command=command,
                ) from e
            except OSError as e:
                raise OracleError(
                    f"Cannot start external denoiser: {e}", command=command
                ) from e

        return attempt()

    def _denoise(self, noisy: ImageTensor, noise_var: ImageTensor) -> ImageTensor:
        with tempfile.TemporaryDirectory(prefix="scoredvi-") as workdir:
            in_path = Path(workdir) / "input.sdvi"
            out_path = Path(workdir) / "output.sdvi"
            nv_path = Path(workdir) / "noise_var.sdvi"
            write_tensor(in_path, noisy)
            write_tensor(nv_path, noise_var)

            command = self._build_command(in_path, out_path, nv_path)
            result = self._run(command)
            if result.returncode != 0:
                raise OracleError(
                    f"External denoiser exited with status {result.returncode}: "
                    f"{result.stderr.strip()}",
                    returncode=result.returncode,
                    stderr=result.stderr,
                    command=command,
                )
            try:
                output = read_tensor(out_path)
            except (FormatError, ImageIOError) as e:
                raise OracleError(
                    f"External denoiser produced an unreadable tensor: {e}",
                    returncode=result.returncode,
                    stderr=result.stderr,
                    command=command,
                ) from e

        if output.shape != noisy.shape:
            raise OracleError(
                f"External denoiser returned shape {output.shape}, "
                f"expected {noisy.shape}",
                returncode=0,
                command=command,
            )
        return np.asarray(output, dtype=np.float64)


def external_denoise(
    noisy: ImageTensor,
    noise_var: ImageTensor,
    command_template: str,
    timeout: float = DEFAULT_TIMEOUT,
) -> ImageTensor:
    """One-shot call of an external denoiser command."""
    return ExternalOracle(command_template, timeout=timeout).denoise(noisy, noise_var)
