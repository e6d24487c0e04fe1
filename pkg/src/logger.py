"""Logging setup shared by every module.

Named loggers propagate to the root, which owns two handlers: a colored
console handler that writes through tqdm so progress bars stay intact, and a
DEBUG log file under LOG_DIR.
"""

import logging
import sys

import colorlog
from tqdm import tqdm

from src.config import LOG_DIR, LOG_FILE_NAME, LOG_LEVEL

DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LOG_COLORS = {
    "DEBUG": "blue",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "bold_red",
}


class TqdmConsoleHandler(logging.StreamHandler):
    """Console handler that prints above active progress bars."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record), file=self.stream)
        except Exception:
            self.handleError(record)


def _console_handler(level) -> logging.Handler:
    handler = TqdmConsoleHandler(sys.stdout)
    handler.setLevel(level)
    handler.setFormatter(
        colorlog.ColoredFormatter(
            "%(asctime)s - %(log_color)s%(levelname)s - %(name)s - %(message)s",
            datefmt=DATE_FORMAT,
            log_colors=LOG_COLORS,
        )
    )
    return handler


def _file_handler() -> logging.Handler:
    LOG_DIR.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(LOG_DIR / LOG_FILE_NAME, encoding="utf-8")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(
        logging.Formatter("%(asctime)s - %(levelname)s - %(name)s - %(message)s", DATE_FORMAT)
    )
    return handler


def setup_logger(name=None):
    """Configure logging to both console and file.

    Args:
        name: Logger name, typically the module name. None or "__main__"
            returns the root logger and installs its handlers once.

    Returns:
        A configured logger instance
    """
    if name and name != "__main__":
        logger = logging.getLogger(name)
        logger.setLevel(logging.DEBUG)
        logger.propagate = True
        return logger

    root = logging.getLogger()
    root.setLevel(logging.DEBUG)
    if not any(isinstance(h, TqdmConsoleHandler) for h in root.handlers):
        root.addHandler(_console_handler(LOG_LEVEL))
        root.addHandler(_file_handler())
    return root


def set_console_level(level) -> None:
    """Change the console threshold; the log file keeps DEBUG."""
    for handler in logging.getLogger().handlers:
        if isinstance(handler, TqdmConsoleHandler):
            handler.setLevel(level)


def get_logger(name=None):
    """Get a configured logger instance.

    Args:
        name: Name for the logger, typically the module name

    Returns:
        A configured logger instance
    """
    return setup_logger(name)
