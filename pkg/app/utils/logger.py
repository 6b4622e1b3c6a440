"""
Logger Utility

Standard-library loggers for local output and Logfire events for structured
run telemetry. Logfire only ships events when a write token is configured.
"""

import logging
import os
import sys
from typing import Any, Dict, Optional

import logfire
from pydantic import BaseModel

from app import __version__
from app.config.settings import settings

logfire.configure(
    token=settings.LOG.LOGFIRE_TOKEN or os.environ.get("LOGFIRE_TOKEN"),
    send_to_logfire="if-token-present",
    service_name=os.environ.get("LOGFIRE_SERVICE_NAME", settings.APP_NAME),
    service_version=os.environ.get("LOGFIRE_SERVICE_VERSION", __version__),
    environment=os.environ.get("LOGFIRE_ENVIRONMENT", settings.ENVIRONMENT),
    console=None if settings.LOG.CONSOLE else False,
)

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class LogContext(BaseModel):
    """Structured fields attached to a log event; unset fields are dropped."""
    component: str
    operation: Optional[str] = None
    run_id: Optional[str] = None
    scenario_id: Optional[int] = None
    extra: Optional[Dict[str, Any]] = None


def _level() -> int:
    return getattr(logging, settings.LOG.LEVEL.upper(), logging.INFO)


def _logfire_enabled() -> bool:
    return bool(settings.LOG.LOGFIRE_TOKEN or os.environ.get("LOGFIRE_TOKEN"))


def _formatter() -> logging.Formatter:
    if settings.LOG.FORMAT.lower() == "json":
        try:
            import json_log_formatter
            return json_log_formatter.JSONFormatter()
        except ImportError:
            pass
    return logging.Formatter(TEXT_FORMAT)


def get_logger(name: str) -> logging.Logger:
    """
    Get a module logger writing to stderr at the configured level.

    Args:
        name: The logger name, typically __name__

    Returns:
        A configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(_level())

    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(_formatter())
        logger.addHandler(handler)
        logger.propagate = False

    return logger


def log_with_context(
    level: str,
    msg: str,
    context: LogContext,
    logger: Optional[logging.Logger] = None
) -> None:
    """
    Log a message with structured context.

    With a Logfire token the fields go to Logfire as attributes; otherwise
    they are appended to the message as ``key=value`` pairs.

    Args:
        level: Log level (debug, info, warning, error)
        msg: Log message
        context: Structured context for the log
        logger: Optional logger instance, uses root logger if not provided
    """
    fields = context.model_dump(exclude_none=True)
    level = level.lower()

    if _logfire_enabled():
        emit = getattr(logfire, level, logfire.info)
        # braces in the message would be read as a template
        emit(msg.replace("{", "{{").replace("}", "}}"), **fields)
        return

    logger = logger or logging.getLogger()
    emit = getattr(logger, level, logger.info)
    emit(f"{msg} - " + " ".join(f"{k}={v}" for k, v in fields.items()))
