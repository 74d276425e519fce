"""
Tests for the logging setup.
"""

import logging
import sys

import pytest

from scoredvi.utils.logger import QUIET_LOGGERS, setup_logger


@pytest.fixture
def root_logger():
    """Restore the root logger's handlers and level after the test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


def test_console_goes_to_stderr(root_logger):
    """Test one standard-error handler at the requested level."""
    assert setup_logger("debug") == logging.DEBUG
    assert root_logger.level == logging.DEBUG
    (handler,) = root_logger.handlers
    assert isinstance(handler, logging.StreamHandler)
    assert handler.stream is sys.stderr
    for name in QUIET_LOGGERS:
        assert logging.getLogger(name).level == logging.WARNING


def test_unknown_level_falls_back_to_info(root_logger):
    """Test that a bad level name does not raise."""
    assert setup_logger("chatty") == logging.INFO
    assert setup_logger("basic_format") == logging.INFO


def test_file_mirror_and_reconfiguration(root_logger, tmp_path):
    """Test that a second call replaces the handlers and writes the log file."""
    setup_logger("INFO")
    log_file = tmp_path / "logs" / "run.log"
    setup_logger("WARNING", log_file=str(log_file), enable_console=False)
    (handler,) = root_logger.handlers
    assert isinstance(handler, logging.FileHandler)

    logging.getLogger("scoredvi.engine").warning("lambda frozen at 2")
    handler.flush()
    assert "scoredvi.engine - WARNING - lambda frozen at 2" in log_file.read_text(encoding="utf-8")
