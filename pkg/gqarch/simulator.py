"""Sample paths of the GQARCH process and the series file format.

Paths are generated for t = -n..n from sigma2_{-n-1} = 0 with the memory sum
truncated at min(n, t + n) lags; r_1..r_n are the observations and
r_{-n}..r_0 the optional pre-sample block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal import fftconvolve

from gqarch.exceptions import EmptySeriesError, InfeasibleParameterError, InvalidParameterError, SeriesParseError
from gqarch.params import Theta, check_feasibility
from gqarch.rng import InnovationKind, draw_innovations, innovation_fourth_moment, stream

logger = structlog.get_logger(__name__)

PRESAMPLE_DELIMITER = "---presample-end---"
SERIES_HEADER = "r"
# beyond this many observations the memory sum is evaluated block-wise
DIRECT_MAX_N = 10_000
BLOCK_SIZE = 2048


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    innovation: InnovationKind = "normal"
    nu: Optional[float] = None
    presample: bool = True
    stream: Tuple[int, ...] = ()

    @model_validator(mode="after")
    def _check_innovation(self) -> "SimConfig":
        if self.innovation == "student-t":
            if self.nu is None or self.nu <= 2.0:
                raise ValueError("student-t innovations require nu > 2")
            if self.nu <= 4.0:
                logger.warning("simulate.infinite_fourth_moment", nu=self.nu)
        return self


@dataclass(frozen=True)
class SamplePath:
    """Observed returns r_1..r_n with optional pre-sample and generation truth."""

    observations: np.ndarray
    presample: Optional[np.ndarray] = None
    vols: Optional[np.ndarray] = None
    theta_true: Optional[Theta] = None
    seed: Optional[int] = None
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        obs = np.ascontiguousarray(self.observations, dtype=np.float64)
        if obs.ndim != 1 or obs.size == 0:
            raise InvalidParameterError("observations must be a non-empty 1-d array")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        if self.presample is not None:
            pre = np.ascontiguousarray(self.presample, dtype=np.float64)
            if pre.ndim != 1 or pre.size == 0:
                raise InvalidParameterError("presample must be a non-empty 1-d array")
            pre.setflags(write=False)
            object.__setattr__(self, "presample", pre)
        if self.vols is not None:
            vols = np.ascontiguousarray(self.vols, dtype=np.float64)
            if vols.shape != obs.shape:
                raise InvalidParameterError(f"vols length {vols.size} != observations length {obs.size}")
            if np.any(vols <= 0.0):
                raise InvalidParameterError("vols must be strictly positive")
            vols.setflags(write=False)
            object.__setattr__(self, "vols", vols)

    @property
    def n(self) -> int:
        return int(self.observations.size)

    @property
    def has_presample(self) -> bool:
        return self.presample is not None

    def extended(self) -> np.ndarray:
        """Pre-sample followed by the observations, oldest first."""
        if self.presample is None:
            return self.observations
        return np.concatenate([self.presample, self.observations])


def _memory_weights(d: float, count: int) -> np.ndarray:
    """j^(d-1) for j = 1..count."""
    return np.arange(1, count + 1, dtype=np.float64) ** (d - 1.0)


def _generate_direct(theta: Theta, z: np.ndarray, lag_cap: int) -> Tuple[np.ndarray, np.ndarray]:
    total = z.size
    r = np.zeros(total)
    sigma2 = np.zeros(total)
    # reversed so that a tail slice pairs lag m..1 with r[i-m..i-1]
    wrev = _memory_weights(theta.d, lag_cap)[::-1].copy()
    omega2 = theta.omega * theta.omega
    prev = 0.0
    for i in range(total):
        m = min(lag_cap, i)
        x = theta.c * float(np.dot(wrev[lag_cap - m:], r[i - m:i])) if m else 0.0
        level = theta.a + x
        prev = omega2 + level * level + theta.gamma * prev
        sigma2[i] = prev
        r[i] = z[i] * math.sqrt(prev)
    return r, sigma2


def _generate_blocked(theta: Theta, z: np.ndarray, lag_cap: int, block: int = BLOCK_SIZE) -> Tuple[np.ndarray, np.ndarray]:
    """Same recursion; contributions of earlier blocks come from one FFT per block."""
    total = z.size
    r = np.zeros(total)
    sigma2 = np.zeros(total)
    weights = np.zeros(total + 1)
    weights[1 : lag_cap + 1] = _memory_weights(theta.d, min(lag_cap, total))
    wrev_block = weights[1 : block + 1][::-1].copy()
    omega2 = theta.omega * theta.omega
    prev = 0.0
    for start in range(0, total, block):
        stop = min(start + block, total)
        history = np.zeros(stop - start)
        lo = max(0, start - lag_cap)
        if start > lo:
            conv = fftconvolve(r[lo:start], weights[: stop - lo])
            history = conv[start - lo : stop - lo]
        for i in range(start, stop):
            m = min(i - start, lag_cap)
            inner = float(np.dot(wrev_block[block - m :], r[i - m : i])) if m else 0.0
            level = theta.a + theta.c * (history[i - start] + inner)
            prev = omega2 + level * level + theta.gamma * prev
            sigma2[i] = prev
            r[i] = z[i] * math.sqrt(prev)
    return r, sigma2


def simulate(theta: Theta, cfg: SimConfig, force: bool = False) -> SamplePath:
    """Generate r_{-n}..r_n and return r_1..r_n (plus the pre-sample when requested).

    Identical (theta, cfg) give bit-identical paths.
    """
    mu4 = innovation_fourth_moment(cfg.innovation, cfg.nu)
    report = check_feasibility(theta, mu4=mu4)
    if not report.l2_ok:
        if not force:
            raise InfeasibleParameterError(report.b2, theta.gamma)
        logger.warning("simulate.infeasible_forced", b2=report.b2, gamma=theta.gamma)
    elif not report.l4_ok:
        logger.debug("simulate.l4_unverified", b2=report.b2, mu4=mu4, slack_l4=report.slack_l4)

    n = cfg.n
    rng = stream(cfg.seed, *cfg.stream)
    z = draw_innovations(rng, cfg.innovation, 2 * n + 1, cfg.nu)
    if n <= DIRECT_MAX_N:
        r, sigma2 = _generate_direct(theta, z, n)
    else:
        r, sigma2 = _generate_blocked(theta, z, n)
    logger.debug("simulate.done", n=n, seed=cfg.seed, stream=cfg.stream, sigma2_max=float(sigma2.max()))
    return SamplePath(
        observations=r[n + 1 :],
        presample=r[: n + 1] if cfg.presample else None,
        vols=np.sqrt(sigma2[n + 1 :]),
        theta_true=theta,
        seed=cfg.seed,
    )


def format_number(value: float, digits: int = 17) -> str:
    return f"{value:.{digits}g}"


def _parse_metadata(line: str) -> Optional[Tuple[str, str]]:
    body = line.lstrip("#").strip()
    if "=" not in body:
        return None
    key, value = body.split("=", 1)
    key = key.strip()
    return (key, value.strip()) if key else None


def load_series(path: str | Path) -> SamplePath:
    """Read a series file: optional ``# key = value`` block, optional ``r`` header,
    values oldest first, optional pre-sample section ended by PRESAMPLE_DELIMITER.
    """
    path_str = str(path)
    metadata: Dict[str, str] = {}
    presample: Optional[list[float]] = None
    values: list[float] = []
    content_started = False
    for line_no, raw_line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if not content_started:
                item = _parse_metadata(line)
                if item is not None:
                    metadata[item[0]] = item[1]
            continue
        if line == PRESAMPLE_DELIMITER:
            if presample is not None:
                raise SeriesParseError(path_str, line_no, line)
            presample = values
            values = []
            content_started = True
            continue
        if line == SERIES_HEADER and not content_started:
            content_started = True
            continue
        try:
            value = float(line)
        except ValueError:
            raise SeriesParseError(path_str, line_no, line)
        if not math.isfinite(value):
            raise SeriesParseError(path_str, line_no, line)
        content_started = True
        values.append(value)
    if not values:
        raise EmptySeriesError(path_str)
    if presample is not None and not presample:
        raise EmptySeriesError(path_str)
    seed = metadata.get("seed")
    return SamplePath(
        observations=np.asarray(values),
        presample=np.asarray(presample) if presample is not None else None,
        seed=int(seed) if seed is not None and seed.isdigit() else None,
        metadata=metadata,
    )


def render_series(series: SamplePath, metadata: Optional[Dict[str, str]] = None, digits: int = 17) -> str:
    echo = series.metadata if metadata is None else metadata
    lines = [f"# {key} = {value}" for key, value in echo.items()]
    lines.append(SERIES_HEADER)
    if series.presample is not None:
        lines.extend(format_number(v, digits) for v in series.presample)
        lines.append(PRESAMPLE_DELIMITER)
    lines.extend(format_number(v, digits) for v in series.observations)
    return "\n".join(lines) + "\n"


def write_series(path: str | Path, series: SamplePath, metadata: Optional[Dict[str, str]] = None, digits: int = 17) -> None:
    Path(path).write_text(render_series(series, metadata, digits), encoding="utf-8")
