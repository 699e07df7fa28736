"""Conditional variance paths, QML objectives and their analytic gradients.

All memory sums Y_t(d) = sum_{j>=1} j^(d-1) r_{t-j} for one d are obtained
from a single FFT convolution; the variance recursion and its five gradient
recursions are first-order linear filters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import fft
from scipy.signal import lfilter

from gqarch.exceptions import InvalidParameterError, NonPositiveVarianceError
from gqarch.params import Theta
from gqarch.simulator import SamplePath

logger = structlog.get_logger(__name__)

SIGMA2_FLOOR = 1e-12

PastKind = Literal["finite-past", "presample", "truncated"]


class PastMode(BaseModel):
    """Which past enters sigma2_t(theta) and which terms enter the average."""

    model_config = ConfigDict(frozen=True)

    kind: PastKind = "finite-past"
    beta: Optional[float] = None

    @model_validator(mode="after")
    def _check_beta(self) -> "PastMode":
        if self.kind == "truncated":
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise ValueError(f"truncated mode requires beta in (0, 1), got {self.beta}")
        elif self.beta is not None:
            raise ValueError(f"beta only applies to truncated mode, got kind={self.kind}")
        return self

    @classmethod
    def finite_past(cls) -> "PastMode":
        return cls(kind="finite-past")

    @classmethod
    def presample(cls) -> "PastMode":
        return cls(kind="presample")

    @classmethod
    def truncated(cls, beta: float) -> "PastMode":
        return cls(kind="truncated", beta=beta)

    @classmethod
    def parse(cls, label: str, beta: Optional[float] = None) -> "PastMode":
        label = label.strip().lower()
        if label.startswith("truncated"):
            return cls.truncated(beta if beta is not None else 0.9)
        return cls(kind=label)

    @property
    def label(self) -> str:
        return f"truncated({self.beta:g})" if self.kind == "truncated" else self.kind

    def window_size(self, n: int) -> int:
        """Number of trailing observations averaged: n, or [n^beta] when truncated."""
        if self.kind != "truncated":
            return n
        size = int(math.floor(n ** self.beta * (1.0 + 1e-12)))
        if size < 1:
            raise InvalidParameterError(f"[n^beta] = {size} < 1 for n={n}, beta={self.beta}")
        return min(size, n)


@dataclass(frozen=True)
class VolPath:
    """sigma2_t(theta) for t = 1..n and, optionally, its gradient rows (gamma, omega, a, d, c)."""

    sigma2: np.ndarray
    grad: Optional[np.ndarray]
    y: np.ndarray
    dy: Optional[np.ndarray]
    floor_activated: bool = False


@dataclass(frozen=True)
class QmlValue:
    value: float
    gradient: Optional[np.ndarray] = None
    per_obs: Optional[np.ndarray] = None
    floor_activated: bool = False


def _fft_length(n: int) -> int:
    """Smallest power of two >= 2n."""
    return 1 << (2 * n - 1).bit_length()


def weighted_sums(
    series: np.ndarray,
    d: float,
    with_log: bool = False,
    max_lag: Optional[int] = None,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """y[t] = sum_{j=1}^{t-1} j^(d-1) series[t-j] (lags capped at ``max_lag``).

    With ``with_log`` also dy[t] = sum_j j^(d-1) log(j) series[t-j], the
    derivative of y in d.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n == 0:
        raise InvalidParameterError("series must not be empty")
    if not 0.0 < d <= 0.5:
        raise InvalidParameterError(f"d must lie in (0, 0.5], got {d}")
    lags = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    if n == 1 or lags < 1:
        return np.zeros(n), (np.zeros(n) if with_log else None)

    j = np.arange(1, lags + 1, dtype=np.float64)
    weights = np.zeros(n)
    weights[1 : lags + 1] = j ** (d - 1.0)
    nfft = _fft_length(n)
    fx = fft.rfft(x, nfft)
    y = fft.irfft(fx * fft.rfft(weights, nfft), nfft)[:n]
    y[0] = 0.0
    dy = None
    if with_log:
        log_weights = np.zeros(n)
        log_weights[1 : lags + 1] = weights[1 : lags + 1] * np.log(j)
        dy = fft.irfft(fx * fft.rfft(log_weights, nfft), nfft)[:n]
        dy[0] = 0.0
    return y, dy


def _ar1(values: np.ndarray, gamma: float) -> np.ndarray:
    """s[t] = values[t] + gamma * s[t-1] from s[-1] = 0."""
    return lfilter([1.0], [1.0, -gamma], values)


def vol_path(
    theta: Theta,
    series: SamplePath,
    mode: PastMode,
    want_grad: bool = False,
    floor: Optional[float] = None,
) -> VolPath:
    """sigma2_t(theta), t = 1..n, under the given past mode.

    finite-past / truncated: memory sums over r_1..r_{t-1}, sigma2_0 = 0.
    presample: the recursion runs over pre-sample and observations from a zero
    start, lags capped at n, mirroring how the path was generated.

    Without ``floor`` a non-positive variance raises; with it, variances are
    floored and the floored entries get a zero gradient.
    """
    if theta.gamma >= 1.0:
        raise InvalidParameterError(f"gamma must be < 1, got {theta.gamma}")
    if mode.kind == "presample":
        if series.presample is None:
            raise InvalidParameterError("presample mode needs a series with a pre-sample block")
        x = series.extended()
        offset = series.presample.size
        lag_cap: Optional[int] = series.n
    else:
        x = series.observations
        offset = 0
        lag_cap = None

    y, dy = weighted_sums(x, theta.d, with_log=want_grad, max_lag=lag_cap)
    level = theta.a + theta.c * y
    raw = _ar1(theta.omega * theta.omega + level * level, theta.gamma)

    floored = np.zeros(raw.size, dtype=bool)
    if floor is None:
        bad = np.flatnonzero(raw[offset:] <= 0.0)
        if bad.size:
            index = int(bad[0])
            raise NonPositiveVarianceError(index + 1, float(raw[offset + index]))
        sigma2 = raw
    else:
        floored = raw < floor
        sigma2 = np.maximum(raw, floor)

    grad = None
    if want_grad:
        lagged = np.concatenate([[0.0], raw[:-1]])
        grad = np.vstack(
            [
                _ar1(lagged, theta.gamma),
                _ar1(np.full(raw.size, 2.0 * theta.omega), theta.gamma),
                _ar1(2.0 * level, theta.gamma),
                _ar1(2.0 * theta.c * level * dy, theta.gamma),
                _ar1(2.0 * level * y, theta.gamma),
            ]
        )
        if floored.any():
            grad[:, floored] = 0.0
        grad = grad[:, offset:]

    floor_hit = bool(floored[offset:].any())
    if floor_hit:
        logger.debug("likelihood.floor_activated", count=int(floored[offset:].sum()), omega=theta.omega)
    return VolPath(
        sigma2=sigma2[offset:],
        grad=grad,
        y=y[offset:],
        dy=dy[offset:] if dy is not None else None,
        floor_activated=floor_hit,
    )


def qml(
    theta: Theta,
    series: SamplePath,
    mode: PastMode,
    want_grad: bool = False,
    floor: Optional[float] = SIGMA2_FLOOR,
) -> QmlValue:
    """Mean of l_t = r_t^2 / sigma2_t + log sigma2_t over the mode's window, and its gradient."""
    path = vol_path(theta, series, mode, want_grad=want_grad, floor=floor)
    n = series.n
    start = n - mode.window_size(n)
    r2 = series.observations[start:] ** 2
    s2 = path.sigma2[start:]
    per_obs = r2 / s2 + np.log(s2)
    gradient = None
    if want_grad:
        score = 1.0 / s2 - r2 / (s2 * s2)
        gradient = (path.grad[:, start:] * score).mean(axis=1)
    return QmlValue(
        value=float(per_obs.mean()),
        gradient=gradient,
        per_obs=per_obs,
        floor_activated=path.floor_activated,
    )


@dataclass(frozen=True)
class GradientCheck:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: float


def gradient_check(theta: Theta, series: SamplePath, mode: PastMode, eps: float = 1e-5) -> GradientCheck:
    """Compare the analytic gradient with central finite differences.

    The step for coordinate i is eps * max(1, |theta_i|); ``rel_error`` is the
    max-norm of the difference over the max-norm of the numeric gradient.
    """
    analytic = qml(theta, series, mode, want_grad=True).gradient
    x0 = theta.as_array()
    numeric = np.zeros(x0.size)
    for i in range(x0.size):
        step = eps * max(1.0, abs(x0[i]))
        plus = x0.copy()
        minus = x0.copy()
        plus[i] += step
        minus[i] -= step
        f_plus = qml(Theta.from_array(plus), series, mode).value
        f_minus = qml(Theta.from_array(minus), series, mode).value
        numeric[i] = (f_plus - f_minus) / (2.0 * step)
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return GradientCheck(
        analytic=analytic,
        numeric=numeric,
        rel_error=float(np.max(np.abs(analytic - numeric))) / scale,
    )
