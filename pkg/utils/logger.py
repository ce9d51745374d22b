"""Centralized logging configuration for dacnet.

Every module obtains its logger through :func:`get_logger`. Records go to
rotating files under the log directory; warnings and errors are echoed to
stderr so that stdout stays reserved for reports and JSON payloads.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
MAX_LOG_BYTES = 10 * 1024 * 1024  # 10MB
LOG_BACKUPS = 5


def get_log_dir() -> Path:
    """Resolve the log directory (``DACNET_LOG_DIR`` or ``<project>/logs``)."""
    override = os.getenv("DACNET_LOG_DIR")
    if override:
        return Path(override).expanduser()
    return Path(__file__).resolve().parent.parent / "logs"


def get_logger(name: str) -> logging.Logger:
    """Get a configured logger instance.

    Args:
        name: Logger name (typically __name__ from the calling module).

    Returns:
        Configured logger instance with file and console handlers.
    """
    logger = logging.getLogger(name)

    if logger.handlers:
        return logger

    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    log_dir = get_log_dir()
    log_dir.mkdir(parents=True, exist_ok=True)

    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=LOG_DATE_FORMAT)

    file_handler = RotatingFileHandler(
        log_dir / "app.log",
        maxBytes=MAX_LOG_BYTES,
        backupCount=LOG_BACKUPS,
        encoding="utf-8",
        errors="replace",
    )
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)

    # Только ошибки
    error_handler = RotatingFileHandler(
        log_dir / "error.log",
        maxBytes=MAX_LOG_BYTES,
        backupCount=LOG_BACKUPS,
        encoding="utf-8",
        errors="replace",
    )
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(formatter)

    # stdout занят отчетами CLI, поэтому консоль только через stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.WARNING)
    console_handler.setFormatter(formatter)

    logger.addHandler(file_handler)
    logger.addHandler(error_handler)
    logger.addHandler(console_handler)

    return logger
