"""
Logging configuration for free-edge.
Every module asks for a child of the ``free-edge`` logger through get_logger().
"""

import logging
import os
import sys
import time
from collections.abc import Iterator
from contextlib import contextmanager

ROOT_LOGGER_NAME = "free-edge"


class ColoredFormatter(logging.Formatter):
    """Formatter that colours the level name unless NO_COLOR is set."""

    COLORS = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[35m",
    }
    RESET = "\033[0m"

    def __init__(self, fmt: str, use_color: bool = True):
        super().__init__(fmt=fmt)
        self.use_color = use_color

    def format(self, record):
        if not self.use_color or record.levelname not in self.COLORS:
            return super().format(record)
        original_levelname = record.levelname
        record.levelname = f"{self.COLORS[original_levelname]}{original_levelname}{self.RESET}"
        try:
            return super().format(record)
        finally:
            record.levelname = original_levelname


def setup_logger(level: int = logging.WARNING) -> logging.Logger:
    """
    Set up the free-edge root logger.

    Calling it again only adjusts the level, so the CLI callbacks can run it
    once per option without stacking handlers.

    Args:
        level: Logging level (default: WARNING)

    Returns:
        The configured root logger
    """
    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.setLevel(level)

    if logger.handlers:
        for handler in logger.handlers:
            handler.setLevel(level)
        return logger

    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(
        ColoredFormatter(
            fmt="%(levelname)-8s %(name)s: %(message)s",
            use_color="NO_COLOR" not in os.environ and sys.stderr.isatty(),
        )
    )
    logger.addHandler(handler)
    logger.propagate = False
    return logger


def get_logger(name: str | None = None) -> logging.Logger:
    """
    Get a logger below the free-edge root.

    Args:
        name: Area name such as ``freeconv`` or ``checks.edge-containment``.
              None returns the root logger.
    """
    if name is None:
        return logging.getLogger(ROOT_LOGGER_NAME)
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


@contextmanager
def log_duration(logger: logging.Logger, label: str) -> Iterator[None]:
    """Log the wall time spent inside the block at DEBUG level."""
    start = time.perf_counter()
    try:
        yield
    finally:
        logger.debug(f"{label} took {time.perf_counter() - start:.3f}s")


_main_logger = setup_logger()
