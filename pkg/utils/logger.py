"""
Logging utility for the imaginary-geometry simulation toolkit
"""

import os
import sys
from datetime import datetime

from loguru import logger

_configured = False


def _env_flag(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


def setup_logger(name: str = "app"):
    """
    Set up logger with appropriate configuration

    Sinks are installed once per process; later calls only bind a new name.

    Args:
        name (str): Logger name

    Returns:
        Logger instance
    """
    global _configured

    if not _configured:
        # Remove default logger
        logger.remove()

        log_level = os.getenv("LOG_LEVEL", "INFO").upper()

        console_format = (
            "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
            "<level>{level: <8}</level> | "
            "<cyan>{extra[name]}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
            "<level>{message}</level>"
        )

        file_format = (
            "{time:YYYY-MM-DD HH:mm:ss} | "
            "{level: <8} | "
            "{extra[name]}:{function}:{line} - "
            "{message}"
        )

        # stdout carries report paths, so console logging goes to stderr
        logger.configure(extra={"name": "app"})
        logger.add(sys.stderr, format=console_format, level=log_level, colorize=True)

        if _env_flag("LOG_TO_FILE", True):
            log_dir = os.getenv("LOG_DIR", "logs")
            os.makedirs(log_dir, exist_ok=True)
            stamp = datetime.now().strftime("%Y-%m-%d")

            logger.add(
                f"{log_dir}/simulation_{stamp}.log",
                format=file_format,
                level=log_level,
                rotation="1 day",
                retention="30 days",
                compression="zip",
            )

            logger.add(
                f"{log_dir}/errors_{stamp}.log",
                format=file_format,
                level="ERROR",
                rotation="1 day",
                retention="30 days",
                compression="zip",
            )

        _configured = True

    return logger.bind(name=name)
