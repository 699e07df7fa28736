"""structlog setup shared by the library and the command-line entrypoint."""

from __future__ import annotations

import logging
import sys

import structlog

_CONFIGURED_LEVEL: int | None = None


def configure_logging(level: str = "info") -> None:
    """Filter below ``level``; events go to stderr so stdout stays parseable."""
    global _CONFIGURED_LEVEL
    numeric = getattr(logging, level.upper(), logging.INFO)
    if _CONFIGURED_LEVEL == numeric:
        return
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(numeric),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
    )
    _CONFIGURED_LEVEL = numeric
