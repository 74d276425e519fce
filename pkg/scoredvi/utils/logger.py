"""
Logging setup for the scoredvi command line.

Records go to standard error, never standard output: `denoise`,
`estimate-noise` and `bench` print results there that scripts parse. A run
can also mirror its records into a file named by `log_file` in the config.
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Tuple

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
# third-party loggers that are chatty below WARNING (PIL logs every PNG chunk)
QUIET_LOGGERS: Tuple[str, ...] = ("PIL",)


def setup_logger(
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    enable_console: bool = True,
) -> int:
    """
    Route every scoredvi logger through the root logger.

    Calling it again replaces the handlers from the previous call, so the CLI
    can first set up console logging from ``--debug`` and then re-run it with
    the level and file from a loaded config.

    Args:
        log_level: Level name; unknown names fall back to INFO
        log_file: File that receives a copy of every record
        enable_console: Attach the standard-error handler

    Returns:
        The numeric level in effect
    """
    level = getattr(logging, log_level.upper(), logging.INFO)
    if not isinstance(level, int):
        level = logging.INFO
    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)

    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()

    def attach(handler: logging.Handler) -> None:
        handler.setLevel(level)
        handler.setFormatter(formatter)
        root.addHandler(handler)

    if enable_console:
        attach(logging.StreamHandler(sys.stderr))
    if log_file:
        try:
            path = Path(log_file)
            path.parent.mkdir(parents=True, exist_ok=True)
            attach(logging.FileHandler(path, encoding="utf-8"))
        except OSError as e:
            root.warning(f"Cannot open log file {log_file}: {e}")

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logging.getLogger(__name__).debug(
        f"Logging at {logging.getLevelName(level)}"
        + (f", mirrored to {log_file}" if log_file else "")
    )
    return level
