"""Parameter vector, feasible region and stationarity checks.

theta = (gamma, omega, a, d, c) parameterizes

    sigma2_t = omega^2 + (a + c * sum_j j^(d-1) r_{t-j})^2 + gamma * sigma2_{t-1}

The L2 (stationarity) and L4 moment conditions are expressed through
B2 = sum_j b_j^2 = c^2 zeta(2(1 - d)).
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Any, Mapping, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from gqarch.env_config import DEFAULT_K4
from gqarch.exceptions import InfeasibleBoxError, InfeasibleParameterError, InvalidParameterError, ZetaDomainError

logger = structlog.get_logger(__name__)

PARAM_NAMES: Tuple[str, ...] = ("gamma", "omega", "a", "d", "c")

ZETA_EPS_MIN = 1e-6
ZETA_TERMS = 10_000
# (B_2k, (2k)!) for k = 1..4
_BERNOULLI = ((1.0 / 6.0, 2.0), (-1.0 / 30.0, 24.0), (1.0 / 42.0, 720.0), (-1.0 / 30.0, 40320.0))

# d stays this far inside (0, 1/2) so that zeta(2(1 - d)) is finite
D_MARGIN = 1e-6
PROJECTION_RTOL = 1e-12


@lru_cache(maxsize=4096)
def zeta_real(s: float) -> float:
    """Riemann zeta for real s > 1.

    Direct sum of the first ZETA_TERMS - 1 terms plus the Euler-Maclaurin
    tail with Bernoulli corrections up to B_8.
    """
    if not math.isfinite(s) or s <= 1.0 + ZETA_EPS_MIN:
        raise ZetaDomainError(s, ZETA_EPS_MIN)
    n = float(ZETA_TERMS)
    j = np.arange(ZETA_TERMS - 1, 0, -1, dtype=np.float64)
    head = float(np.sum(j ** (-s)))
    tail = n ** (1.0 - s) / (s - 1.0) + 0.5 * n ** (-s)
    rising = s
    power = n ** (-s - 1.0)
    for k, (bernoulli, factorial) in enumerate(_BERNOULLI):
        if k > 0:
            rising *= (s + 2 * k - 1) * (s + 2 * k)
            power /= n * n
        tail += bernoulli / factorial * rising * power
    return head + tail


class Theta(BaseModel):
    """The five GQARCH parameters, ordered (gamma, omega, a, d, c)."""

    model_config = ConfigDict(frozen=True)

    gamma: float
    omega: float
    a: float
    d: float
    c: float

    @model_validator(mode="after")
    def _check_invariants(self) -> "Theta":
        values = (self.gamma, self.omega, self.a, self.d, self.c)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"theta must be finite, got {values}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.omega < 0.0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if not 0.0 < self.d < 0.5:
            raise ValueError(f"d must lie in (0, 0.5), got {self.d}")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma, self.omega, self.a, self.d, self.c], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Any) -> "Theta":
        gamma, omega, a, d, c = (float(v) for v in values)
        return cls(gamma=gamma, omega=omega, a=a, d=d, c=c)

    def replace(self, **changes: float) -> "Theta":
        return Theta(**{**self.model_dump(), **changes})

    def flipped(self) -> "Theta":
        """The observationally equivalent (-a, -c) representative."""
        return self.replace(a=-self.a, c=-self.c)

    def canonical(self) -> "Theta":
        return self.flipped() if self.c < 0.0 else self

    @property
    def is_canonical(self) -> bool:
        return self.c >= 0.0


class ParamBox(BaseModel):
    """Box constraints on (gamma, omega, a, d) plus the nonlinear B2 band.

    The B2 band at a given gamma is
    [max(b2_lower_offset - gamma, b2_lower_ratio * gamma),
     min(b2_upper_offset - gamma, b2_upper_ratio * gamma)].
    """

    model_config = ConfigDict(frozen=True)

    gamma_bounds: Tuple[float, float] = (0.001, 0.9)
    omega_bounds: Tuple[float, float] = (0.0, 2.0)
    a_bounds: Tuple[float, float] = (-2.0, 2.0)
    d_bounds: Tuple[float, float] = (0.0, 0.5)
    b2_lower_offset: float = 0.05
    b2_lower_ratio: float = 1.0 / 999.0
    b2_upper_offset: float = 0.99
    b2_upper_ratio: float = 99.0

    @field_validator("gamma_bounds", "omega_bounds", "a_bounds", "d_bounds")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"bounds must be finite with lower <= upper, got {value}")
        return value

    @model_validator(mode="after")
    def _within_model(self) -> "ParamBox":
        if self.gamma_bounds[0] < 0.0 or self.gamma_bounds[1] >= 1.0:
            raise ValueError("gamma bounds must lie in [0, 1)")
        if self.omega_bounds[0] < 0.0:
            raise ValueError("omega bounds must be >= 0")
        if self.d_bounds[0] < 0.0 or self.d_bounds[1] > 0.5:
            raise ValueError("d bounds must lie in [0, 0.5]")
        return self

    def bounds(self) -> list[Tuple[float, float]]:
        """Linear bounds for (gamma, omega, a, d) with d kept off the open ends."""
        return [self.gamma_bounds, self.omega_bounds, self.a_bounds, self.d_interval()]

    def d_interval(self) -> Tuple[float, float]:
        lo = max(self.d_bounds[0], D_MARGIN)
        hi = min(self.d_bounds[1], 0.5 - D_MARGIN)
        return (lo, max(lo, hi))

    def b2_interval(self, gamma: float) -> Tuple[float, float]:
        lower = max(self.b2_lower_offset - gamma, self.b2_lower_ratio * gamma)
        upper = min(self.b2_upper_offset - gamma, self.b2_upper_ratio * gamma)
        return (lower, upper)

    def center(self) -> Theta:
        gamma = 0.5 * sum(self.gamma_bounds)
        d = 0.5 * sum(self.d_interval())
        lower, upper = self.b2_interval(gamma)
        b2 = 0.5 * (max(lower, 0.0) + max(upper, 0.0))
        return Theta(
            gamma=gamma,
            omega=0.5 * sum(self.omega_bounds),
            a=0.5 * sum(self.a_bounds),
            d=d,
            c=math.sqrt(b2 / zeta_real(2.0 * (1.0 - d))),
        )

    def to_config(self) -> dict[str, float]:
        return {
            "box_gamma_lo": self.gamma_bounds[0],
            "box_gamma_hi": self.gamma_bounds[1],
            "box_omega_lo": self.omega_bounds[0],
            "box_omega_hi": self.omega_bounds[1],
            "box_a_lo": self.a_bounds[0],
            "box_a_hi": self.a_bounds[1],
            "box_d_lo": self.d_bounds[0],
            "box_d_hi": self.d_bounds[1],
            "box_b2_lower_offset": self.b2_lower_offset,
            "box_b2_lower_ratio": self.b2_lower_ratio,
            "box_b2_upper_offset": self.b2_upper_offset,
            "box_b2_upper_ratio": self.b2_upper_ratio,
        }

    @classmethod
    def from_config(cls, values: Mapping[str, Any]) -> "ParamBox":
        """Build a box from flat ``box_*`` keys; missing keys keep their defaults."""
        defaults = cls().to_config()
        merged = {key: float(values.get(key, default)) for key, default in defaults.items()}
        return cls(
            gamma_bounds=(merged["box_gamma_lo"], merged["box_gamma_hi"]),
            omega_bounds=(merged["box_omega_lo"], merged["box_omega_hi"]),
            a_bounds=(merged["box_a_lo"], merged["box_a_hi"]),
            d_bounds=(merged["box_d_lo"], merged["box_d_hi"]),
            b2_lower_offset=merged["box_b2_lower_offset"],
            b2_lower_ratio=merged["box_b2_lower_ratio"],
            b2_upper_offset=merged["box_b2_upper_offset"],
            b2_upper_ratio=merged["box_b2_upper_ratio"],
        )


class FeasibilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    b2: float
    l2_ok: bool
    l4_ok: bool
    slack_l2: float
    slack_l4: float


def b2_of(theta: Theta) -> float:
    """B2 = c^2 zeta(2(1 - d))."""
    if theta.c == 0.0:
        return 0.0
    return theta.c * theta.c * zeta_real(2.0 * (1.0 - theta.d))


def check_feasibility(theta: Theta, mu4: float = 3.0, k4: float = DEFAULT_K4) -> FeasibilityReport:
    """L2 (B2 < 1 - gamma) and L4 (K4 mu4 B2^2 < 1 - gamma) verdicts for theta."""
    if mu4 < 1.0:
        raise InvalidParameterError(f"mu4 must be >= 1, got {mu4}")
    if k4 <= 0.0:
        raise InvalidParameterError(f"k4 must be positive, got {k4}")
    b2 = b2_of(theta)
    slack_l2 = 1.0 - theta.gamma - b2
    # mu4 may be inf (heavy tails); B2 = 0 still leaves the L4 term at zero
    slack_l4 = 1.0 - theta.gamma - (k4 * mu4 * b2 * b2 if b2 > 0.0 else 0.0)
    return FeasibilityReport(
        b2=b2,
        l2_ok=slack_l2 > 0.0,
        l4_ok=slack_l4 > 0.0,
        slack_l2=slack_l2,
        slack_l4=slack_l4,
    )


def stationary_variance(theta: Theta) -> float:
    """E r_t^2 = (omega^2 + a^2) / (1 - gamma - B2) of the stationary L2 solution."""
    b2 = b2_of(theta)
    slack = 1.0 - theta.gamma - b2
    if slack <= 0.0:
        raise InfeasibleParameterError(b2, theta.gamma)
    return (theta.omega**2 + theta.a**2) / slack


def project_into_box(theta: Theta, box: ParamBox) -> Theta:
    """Clip (gamma, omega, a, d) into the box and rescale c into the B2 band.

    The sign of c is preserved; c = 0 is mapped to the positive root.
    """
    gamma = float(np.clip(theta.gamma, *box.gamma_bounds))
    omega = float(np.clip(theta.omega, *box.omega_bounds))
    a = float(np.clip(theta.a, *box.a_bounds))
    d = float(np.clip(theta.d, *box.d_interval()))
    lower, upper = box.b2_interval(gamma)
    if lower > upper:
        raise InfeasibleBoxError(gamma, lower, upper)
    z = zeta_real(2.0 * (1.0 - d))
    c = theta.c
    b2 = c * c * z
    if b2 < lower * (1.0 - PROJECTION_RTOL) or b2 > upper * (1.0 + PROJECTION_RTOL):
        target = min(max(b2, lower), upper)
        magnitude = math.sqrt(target / z)
        c = -magnitude if c < 0.0 else magnitude
    return Theta(gamma=gamma, omega=omega, a=a, d=d, c=c)
