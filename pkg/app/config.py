"""Application configuration management."""

from __future__ import annotations

import logging
import logging.config
import sys
from typing import Any

import structlog

from app.lib import log as log_conf
from app.lib.settings import get_settings

settings = get_settings()

as_json = settings.log.FORCE_JSON or not log_conf.is_tty()

stdlib_logging_config: dict[str, Any] = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "standard": {
            "()": structlog.stdlib.ProcessorFormatter,
            "processors": log_conf.stdlib_logger_processors(as_json=as_json),
        },
    },
    "handlers": {
        "default": {
            "class": "logging.StreamHandler",
            "formatter": "standard",
            "stream": "ext://sys.stderr",
        },
    },
    "root": {"level": logging.getLevelName(settings.log.LEVEL), "handlers": ["default"]},
    "loggers": {
        "py.warnings": {
            "propagate": False,
            "level": settings.log.WARNINGS_LEVEL,
            "handlers": ["default"],
        },
    },
}


def setup_logging() -> None:
    """Configure stdlib logging and structlog from the current settings."""
    logging.config.dictConfig(stdlib_logging_config)
    logging.captureWarnings(True)
    structlog.configure(
        cache_logger_on_first_use=True,
        logger_factory=structlog.BytesLoggerFactory(file=sys.stderr.buffer)
        if as_json
        else structlog.PrintLoggerFactory(file=sys.stderr),
        processors=log_conf.structlog_processors(as_json=as_json),
        wrapper_class=structlog.make_filtering_bound_logger(settings.log.LEVEL),
    )
