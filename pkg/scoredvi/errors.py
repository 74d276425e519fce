"""
ScoreDVI Exceptions

Exception hierarchy shared by every scoredvi module. The CLI maps these onto
exit codes (2 for usage/validation problems, 1 for everything else).
"""

from typing import Any, Optional


class ScoreDVIError(Exception):
    """Base class for all scoredvi errors."""

    pass


class ArgumentError(ScoreDVIError, ValueError):
    """Raised when an argument has the wrong shape, size or value."""

    pass


class DomainError(ScoreDVIError, ValueError):
    """Raised when a value lies outside the mathematical domain of a function."""

    pass


class FormatError(ScoreDVIError):
    """Raised for unsupported raster formats or malformed tensor files."""

    pass


class ImageIOError(ScoreDVIError, OSError):
    """Raised when an image or tensor file cannot be read or written."""

    pass


class ConfigError(ScoreDVIError):
    """Raised when a configuration file is missing keys or has bad values."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class NumericError(ScoreDVIError, ArithmeticError):
    """Raised when a NaN or infinity shows up in a loss or gradient."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class OracleError(ScoreDVIError):
    """Raised when a denoiser oracle fails or returns a malformed result."""

    def __init__(
        self,
        message: str,
        returncode: Optional[int] = None,
        stderr: str = "",
        command: Optional[str] = None,
    ):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr
        self.command = command


class RunAbortedError(ScoreDVIError):
    """Raised when the optimization loop stops on an oracle or numeric error."""

    def __init__(self, message: str, iteration: int, last_breakdown: Any = None):
        super().__init__(f"{message} (aborted at iteration {iteration})")
        self.iteration = iteration
        self.last_breakdown = last_breakdown
