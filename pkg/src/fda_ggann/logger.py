"""
Logging for fda-ggann: one RichHandler on stderr, so --json output on stdout
stays machine-readable, and an optional plain-text log file.
"""
import logging
from typing import List, Optional

from rich.console import Console
from rich.logging import RichHandler

PACKAGE = "fda_ggann"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure the root logger.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        log_file: Optional path of a log file that receives every record at ``level``.

    Returns:
        The package logger.
    """
    handlers: List[logging.Handler] = [
        RichHandler(console=Console(stderr=True), rich_tracebacks=True, markup=False, show_path=False)
    ]
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        handlers.append(file_handler)

    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]", handlers=handlers, force=True)
    # numpy overflow/invalid-value warnings end up in the same log
    logging.captureWarnings(True)

    logger = logging.getLogger(PACKAGE)
    logger.setLevel(level)
    return logger


def get_logger(name: str) -> logging.Logger:
    """Logger for one area of the package, e.g. ``get_logger("trainer")``."""
    return logging.getLogger(f"{PACKAGE}.{name}")
