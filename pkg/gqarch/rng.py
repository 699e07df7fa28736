"""Deterministic random streams and innovation laws.

Streams are counter-based Philox generators keyed by ``(seed, *keys)``, so a
replication draws the same numbers whichever worker runs it.
"""
from __future__ import annotations

import math
from typing import Literal, Optional

import numpy as np
import structlog

from gqarch.exceptions import InvalidParameterError

logger = structlog.get_logger(__name__)

InnovationKind = Literal["normal", "student-t", "rademacher"]
INNOVATION_KINDS = ("normal", "student-t", "rademacher")


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the sub-stream ``keys`` of ``seed``."""
    if seed < 0 or seed >= 2**64:
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def innovation_fourth_moment(kind: InnovationKind, nu: Optional[float] = None) -> float:
    """E zeta^4 of the standardized innovation law (inf when it does not exist)."""
    if kind == "normal":
        return 3.0
    if kind == "rademacher":
        return 1.0
    if nu is None or nu <= 4.0:
        return math.inf
    return 3.0 * (nu - 2.0) / (nu - 4.0)


def draw_innovations(
    rng: np.random.Generator,
    kind: InnovationKind,
    size: int,
    nu: Optional[float] = None,
) -> np.ndarray:
    """Draw ``size`` i.i.d. innovations with mean 0 and variance 1."""
    if kind == "normal":
        return rng.standard_normal(size)
    if kind == "student-t":
        if nu is None or nu <= 2.0:
            raise InvalidParameterError(f"student-t innovations need nu > 2, got {nu}")
        # unit variance
        return rng.standard_t(nu, size) * math.sqrt((nu - 2.0) / nu)
    if kind == "rademacher":
        return rng.integers(0, 2, size).astype(np.float64) * 2.0 - 1.0
    raise InvalidParameterError(f"unknown innovation kind {kind!r}; expected one of {', '.join(INNOVATION_KINDS)}")
