"""Canonical environment loader for gqarch runs."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import structlog

logger = structlog.get_logger(__name__)

DEFAULT_K4 = 32.207**4
LOG_LEVELS = {"debug", "info", "warning", "error", "critical"}

_DOTENV_PATH = Path(__file__).resolve().parents[1] / ".env"
_dotenv_applied = False


def _parse_dotenv(text: str) -> dict[str, str]:
    """``KEY=value`` lines; comments and keyless lines are skipped."""
    parsed: dict[str, str] = {}
    for line in map(str.strip, text.splitlines()):
        if line.startswith("#"):
            continue
        name, sep, raw = line.partition("=")
        name = name.strip()
        if not sep or not name:
            continue
        raw = raw.strip()
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
            raw = raw[1:-1]
        parsed[name] = raw
    return parsed


def _load_dotenv_once() -> None:
    """Copy the repository ``.env`` into os.environ without overriding keys already set."""
    global _dotenv_applied
    if _dotenv_applied:
        return
    _dotenv_applied = True
    if _DOTENV_PATH.is_file():
        for name, raw in _parse_dotenv(_DOTENV_PATH.read_text(encoding="utf-8")).items():
            os.environ.setdefault(name, raw)


def _env(key: str, default: str = "", aliases: Tuple[str, ...] = ()) -> str:
    for name in (key, *aliases):
        value = (os.environ.get(name) or "").strip()
        if value:
            return value
    return default


def _float_env(key: str, default: float) -> float:
    raw = _env(key, "")
    if not raw:
        return default
    try:
        return float(raw)
    except ValueError:
        raise RuntimeError(f"{key} must be a number, got {raw!r}")


@dataclass(frozen=True)
class GqarchConfig:
    log_level: str
    workers: int
    metrics_path: str
    mu4: float
    k4: float
    slow_tests: bool
    format_digits: int


def load_config() -> GqarchConfig:
    _load_dotenv_once()

    log_level = _env("GQARCH_LOG_LEVEL", "info", aliases=("LOG_LEVEL",)).lower()
    if log_level not in LOG_LEVELS:
        raise RuntimeError("GQARCH_LOG_LEVEL must be one of: debug|info|warning|error|critical")

    try:
        workers = max(1, int(_env("GQARCH_WORKERS", "1")))
    except (TypeError, ValueError):
        logger.warning("config.workers_invalid", value=_env("GQARCH_WORKERS"))
        workers = 1

    mu4 = _float_env("GQARCH_MU4", 3.0)
    if mu4 < 1.0:
        raise RuntimeError("GQARCH_MU4 must be >= 1 (E zeta^4 >= (E zeta^2)^2 = 1)")
    k4 = _float_env("GQARCH_K4", DEFAULT_K4)
    if k4 <= 0.0:
        raise RuntimeError("GQARCH_K4 must be positive")

    try:
        format_digits = min(17, max(6, int(_env("GQARCH_FORMAT_DIGITS", "17"))))
    except (TypeError, ValueError):
        format_digits = 17

    return GqarchConfig(
        log_level=log_level,
        workers=workers,
        metrics_path=_env("GQARCH_METRICS_PATH", ""),
        mu4=mu4,
        k4=k4,
        slow_tests=_env("GQARCH_SLOW_TESTS", "false").lower() in {"1", "true", "yes", "on"},
        format_digits=format_digits,
    )


def export_config(config: GqarchConfig) -> dict[str, str]:
    """Canonical env map of the resolved configuration, echoed into run outputs."""
    return {
        "GQARCH_LOG_LEVEL": config.log_level,
        "GQARCH_WORKERS": str(config.workers),
        "GQARCH_METRICS_PATH": config.metrics_path,
        "GQARCH_MU4": repr(config.mu4),
        "GQARCH_K4": repr(config.k4),
        "GQARCH_SLOW_TESTS": "true" if config.slow_tests else "false",
        "GQARCH_FORMAT_DIGITS": str(config.format_digits),
    }
