"""Plug-in information matrices, sandwich covariance and Wald coverage.

B = E[sigma^-4 grad(sigma2) grad(sigma2)^T], A = E[(r^2/sigma2 - 1)^2 sigma^-4 grad grad^T]
and, under the model, A = kappa4 B with kappa4 = E(zeta^2 - 1)^2, so the
asymptotic covariance of the estimator is kappa4 B^-1.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict
from scipy import linalg
from scipy.stats import norm

from gqarch.exceptions import GqarchError, InvalidParameterError, SingularInformationError
from gqarch.likelihood import SIGMA2_FLOOR, PastMode, vol_path
from gqarch.optimizer import OptimOptions, estimate
from gqarch.params import Theta
from gqarch.rng import InnovationKind
from gqarch.simulator import SamplePath, SimConfig, simulate
from gqarch.workers import run_ordered

logger = structlog.get_logger(__name__)

MIN_WINDOW = 30
MAX_CONDITION = 1e12
COVERAGE_STREAM = 0


@dataclass(frozen=True)
class InfoMatrices:
    b_hat: np.ndarray
    a_hat: np.ndarray
    kappa4_hat: float
    sigma_hat: Optional[np.ndarray]
    se: Optional[np.ndarray]
    effective_n: int
    condition_number: float


def _condition_number(matrix: np.ndarray) -> float:
    eigenvalues = linalg.eigvalsh(matrix)
    smallest = float(eigenvalues[0])
    if smallest <= 0.0:
        return float("inf")
    return float(eigenvalues[-1]) / smallest


def info_matrices(theta: Theta, series: SamplePath, mode: PastMode) -> InfoMatrices:
    """Window averages of the score outer products at ``theta``.

    Raises SingularInformationError (with the matrices attached as ``info``)
    when B is not safely invertible; standard errors are then withheld.
    """
    path = vol_path(theta, series, mode, want_grad=True, floor=SIGMA2_FLOOR)
    n = series.n
    m = mode.window_size(n)
    if m < MIN_WINDOW:
        raise InvalidParameterError(f"effective window {m} < {MIN_WINDOW} observations")
    start = n - m
    s2 = path.sigma2[start:]
    grad = path.grad[:, start:]
    excess = series.observations[start:] ** 2 / s2 - 1.0
    scaled = grad / s2
    b_hat = scaled @ scaled.T / m
    a_hat = (scaled * excess**2) @ scaled.T / m
    b_hat = 0.5 * (b_hat + b_hat.T)
    a_hat = 0.5 * (a_hat + a_hat.T)
    kappa4_hat = float(np.mean(excess**2))
    condition = _condition_number(b_hat)

    info = InfoMatrices(
        b_hat=b_hat,
        a_hat=a_hat,
        kappa4_hat=kappa4_hat,
        sigma_hat=None,
        se=None,
        effective_n=m,
        condition_number=condition,
    )
    if not condition <= MAX_CONDITION:
        logger.warning("inference.singular_b", condition_number=condition)
        raise SingularInformationError(condition, info)
    try:
        factor = linalg.cho_factor(b_hat)
    except linalg.LinAlgError:
        raise SingularInformationError(condition, info)
    sigma_hat = kappa4_hat * linalg.cho_solve(factor, np.eye(5))
    sigma_hat = 0.5 * (sigma_hat + sigma_hat.T)
    se = np.sqrt(np.diag(sigma_hat) / m)
    return replace(info, sigma_hat=sigma_hat, se=se)


class CoverageReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    coverage: Tuple[float, float, float, float, float]
    level: float
    completed: int
    excluded: int


@dataclass(frozen=True)
class _CoverageJob:
    theta0: Theta
    n: int
    seed: int
    rep: int
    mode: PastMode
    opts: OptimOptions
    z: float
    innovation: InnovationKind
    nu: Optional[float]


def _coverage_replication(job: _CoverageJob) -> Optional[Tuple[bool, ...]]:
    cfg = SimConfig(
        n=job.n,
        seed=job.seed,
        innovation=job.innovation,
        nu=job.nu,
        presample=job.mode.kind == "presample",
        stream=(COVERAGE_STREAM, job.rep),
    )
    try:
        series = simulate(job.theta0, cfg)
        result = estimate(series, job.mode, job.opts)
        info = info_matrices(result.theta_hat, series, job.mode)
    except GqarchError as exc:
        logger.info("coverage.replication_excluded", rep=job.rep, error=str(exc))
        return None
    half_width = job.z * info.se
    miss = np.abs(result.theta_hat.as_array() - job.theta0.as_array())
    return tuple(bool(v) for v in miss <= half_width)


def ci_coverage_experiment(
    theta0: Theta,
    n: int,
    reps: int,
    level: float,
    mode: PastMode,
    seed: int,
    opts: Optional[OptimOptions] = None,
    workers: int = 1,
    innovation: InnovationKind = "normal",
    nu: Optional[float] = None,
) -> CoverageReport:
    """Share of replications whose Wald interval covers theta0, per coordinate."""
    if reps < 50:
        raise InvalidParameterError(f"reps must be >= 50, got {reps}")
    if not 0.5 <= level < 1.0:
        raise InvalidParameterError(f"level must lie in [0.5, 1), got {level}")
    opts = opts or OptimOptions(seed=seed)
    z = float(norm.ppf(0.5 + 0.5 * level))
    jobs = [_CoverageJob(theta0, n, seed, k, mode, opts, z, innovation, nu) for k in range(reps)]
    outcomes: List[Optional[Tuple[bool, ...]]] = run_ordered(_coverage_replication, jobs, workers)
    hits = np.array([o for o in outcomes if o is not None], dtype=float)
    completed = int(hits.shape[0])
    excluded = reps - completed
    if completed == 0:
        coverage = (float("nan"),) * 5
    else:
        coverage = tuple(float(v) for v in hits.mean(axis=0))
    logger.info("coverage.done", level=level, completed=completed, excluded=excluded, coverage=coverage)
    return CoverageReport(coverage=coverage, level=level, completed=completed, excluded=excluded)
