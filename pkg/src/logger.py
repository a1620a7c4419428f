"""
Logging utility module for the quasiconformal imaging toolkit.

This module provides a centralized logging setup that:
- Creates the log directory if file logging is enabled
- Sends console output to stderr, leaving stdout to command results
- Prevents duplicate handlers
- Lets the CLI raise or lower verbosity for every toolkit logger at once
"""

import logging
import sys

from src.config import LOG_DIR, LOG_FILE, LOG_LEVEL, LOG_FORMAT, LOG_DATE_FORMAT, LOG_TO_FILE

# Names of loggers created through setup_logger
_TOOLKIT_LOGGERS: set[str] = set()


def _configured(handler: logging.Handler, level: int) -> logging.Handler:
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=LOG_DATE_FORMAT))
    return handler


def setup_logger(name: str) -> logging.Logger:
    """
    Return the toolkit logger for a module, attaching handlers on first use.

    Handlers: a stderr stream handler, plus a file handler on LOG_FILE unless
    QCWARP_LOG_TO_FILE is off.

    Args:
        name: The name of the logger (typically __name__ of the calling module)

    Returns:
        Configured logging.Logger instance

    Example:
        >>> from src.logger import setup_logger
        >>> logger = setup_logger(__name__)
        >>> logger.info("Solving reduced system")
    """
    logger = logging.getLogger(name)
    _TOOLKIT_LOGGERS.add(name)
    if logger.handlers:
        return logger

    level = getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logger.setLevel(level)

    if LOG_TO_FILE:
        LOG_DIR.mkdir(parents=True, exist_ok=True)
        logger.addHandler(_configured(logging.FileHandler(LOG_FILE, encoding="utf-8"), level))
    logger.addHandler(_configured(logging.StreamHandler(sys.stderr), level))

    # Keep records out of the root logger
    logger.propagate = False
    return logger


def set_log_level(level: int) -> None:
    """
    Apply a log level to every toolkit logger and its handlers.

    Args:
        level: A logging level such as logging.DEBUG or logging.WARNING
    """
    for name in _TOOLKIT_LOGGERS:
        logger = logging.getLogger(name)
        logger.setLevel(level)
        for handler in logger.handlers:
            handler.setLevel(level)
