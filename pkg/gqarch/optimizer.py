"""Constrained multi-start QML estimation.

The search runs in an unconstrained space: gamma, omega, a and d are logistic
images of their box intervals and c is recovered from a logistic position of
B2 = c^2 zeta(2(1 - d)) inside its gamma-dependent band, so every iterate is
feasible and c >= 0.
"""
from __future__ import annotations

import math
import time
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import qmc

from gqarch.exceptions import GqarchError, InfeasibleBoxError, NoFeasibleStartError
from gqarch.likelihood import PastMode, qml
from gqarch.observability.metrics import estimation_seconds, estimations_total
from gqarch.params import PARAM_NAMES, ParamBox, Theta, project_into_box, zeta_real
from gqarch.rng import stream
from gqarch.simulator import SamplePath

logger = structlog.get_logger(__name__)

StartStrategy = Literal["latin-hypercube", "user-supplied", "perturbed-reference"]

MIN_SERIES_LENGTH = 50
BOUNDARY_RTOL = 1e-4
SIMPLEX_STEP = 0.5
# latin-hypercube starts avoid the outer 5% of each transformed interval
LHS_MARGIN = 0.05
POLISH_MAX_ITERS = 50
POLISH_MAX_HALVINGS = 30
ARMIJO = 1e-4
FLAT_D_TOL = 1e-8
_P_EPS = 1e-12
_LHS_STREAM = 1


class OptimOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    box: ParamBox = Field(default_factory=ParamBox)
    starts: int = Field(default=5, ge=1)
    max_iters: int = Field(default=2000, ge=1)
    f_tol: float = Field(default=1e-9, gt=0.0)
    x_tol: float = Field(default=1e-7, gt=0.0)
    use_gradient: bool = True
    start_strategy: StartStrategy = "latin-hypercube"
    seed: int = Field(default=0, ge=0, lt=2**64)
    initial: Tuple[Theta, ...] = ()
    perturbation: float = Field(default=0.5, gt=0.0)

    @model_validator(mode="after")
    def _check_initial(self) -> "OptimOptions":
        if self.start_strategy != "latin-hypercube" and not self.initial:
            raise ValueError(f"start_strategy={self.start_strategy} needs at least one initial theta")
        return self


class EstimateResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta_hat: Theta
    objective: float
    mode: PastMode
    converged: bool
    iterations: int
    starts_used: int
    at_boundary: Tuple[bool, bool, bool, bool, bool]
    floor_activated: bool
    warnings: Tuple[str, ...] = ()
    start_objectives: Tuple[float, ...] = ()


class BoxTransform:
    """Bijection between R^5 and the interior of a ParamBox (with c > 0)."""

    def __init__(self, box: ParamBox):
        self.box = box
        bounds = box.bounds()
        self.lower = np.array([lo for lo, _ in bounds])
        self.upper = np.array([hi for _, hi in bounds])
        self.width = self.upper - self.lower

    def b2_band(self, gamma: float) -> Tuple[float, float]:
        lower, upper = self.box.b2_interval(gamma)
        if lower > upper:
            raise InfeasibleBoxError(gamma, lower, upper)
        return lower, upper

    def to_theta(self, u: np.ndarray) -> Theta:
        gamma, omega, a, d = self.lower + self.width * expit(u[:4])
        lower, upper = self.b2_band(gamma)
        b2 = lower + (upper - lower) * expit(u[4])
        c = math.sqrt(b2 / zeta_real(2.0 * (1.0 - d)))
        return Theta(gamma=gamma, omega=omega, a=a, d=d, c=c)

    def from_theta(self, theta: Theta) -> np.ndarray:
        inside = project_into_box(theta.canonical(), self.box)
        x = inside.as_array()[:4]
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(self.width > 0.0, (x - self.lower) / self.width, 0.5)
        lower, upper = self.b2_band(inside.gamma)
        b2 = inside.c * inside.c * zeta_real(2.0 * (1.0 - inside.d))
        q = (b2 - lower) / (upper - lower) if upper > lower else 0.5
        return logit(np.clip(np.append(p, q), _P_EPS, 1.0 - _P_EPS))

    def boundary_flags(self, theta: Theta) -> Tuple[bool, bool, bool, bool, bool]:
        x = theta.as_array()[:4]
        tol = BOUNDARY_RTOL * self.width
        linear = (x - self.lower <= tol) | (self.upper - x <= tol)
        lower, upper = self.b2_band(theta.gamma)
        b2 = theta.c * theta.c * zeta_real(2.0 * (1.0 - theta.d))
        band_tol = BOUNDARY_RTOL * (upper - lower)
        c_flag = b2 - lower <= band_tol or upper - b2 <= band_tol
        return (bool(linear[0]), bool(linear[1]), bool(linear[2]), bool(linear[3]), bool(c_flag))


def _start_points(opts: OptimOptions, transform: BoxTransform) -> List[np.ndarray]:
    if opts.start_strategy == "latin-hypercube":
        sampler = qmc.LatinHypercube(d=5, seed=stream(opts.seed, _LHS_STREAM))
        cube = LHS_MARGIN + (1.0 - 2.0 * LHS_MARGIN) * sampler.random(opts.starts)
        return [logit(row) for row in cube]

    anchors: List[np.ndarray] = []
    for theta in opts.initial:
        try:
            anchors.append(transform.from_theta(theta))
        except InfeasibleBoxError as exc:
            logger.warning("estimate.start_infeasible", theta=theta.model_dump(), error=str(exc))
    if not anchors:
        raise NoFeasibleStartError(len(opts.initial), "projection failed for every initial theta")
    if opts.start_strategy == "user-supplied":
        return anchors

    rng = stream(opts.seed, _LHS_STREAM)
    points = [anchors[0]]
    while len(points) < opts.starts:
        points.append(anchors[0] + opts.perturbation * rng.standard_normal(5))
    return points


def _polish(theta: Theta, value: float, series: SamplePath, mode: PastMode, opts: OptimOptions) -> Tuple[Theta, float]:
    """Projected-gradient descent with Armijo backtracking; only improving steps are taken."""
    x = theta.as_array()
    for _ in range(POLISH_MAX_ITERS):
        grad = qml(Theta.from_array(x), series, mode, want_grad=True).gradient
        eta = 1.0
        accepted = False
        for _ in range(POLISH_MAX_HALVINGS):
            try:
                candidate = project_into_box(Theta.from_array(x - eta * grad), opts.box)
            except (GqarchError, ValueError):
                eta *= 0.5
                continue
            step = candidate.as_array() - x
            new_value = qml(candidate, series, mode).value
            if new_value <= value - ARMIJO / eta * float(step @ step) and new_value < value:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        improvement = value - new_value
        x, value = candidate.as_array(), new_value
        if improvement < opts.f_tol:
            break
    return Theta.from_array(x), value


def _flat_in_d(theta: Theta, series: SamplePath, mode: PastMode, box: ParamBox) -> bool:
    lo, hi = box.d_interval()
    values = [qml(theta.replace(d=d), series, mode).value for d in (lo, theta.d, hi)]
    return max(values) - min(values) < FLAT_D_TOL * max(1.0, abs(values[1]))


def estimate(series: SamplePath, mode: PastMode, opts: Optional[OptimOptions] = None) -> EstimateResult:
    """Multi-start QML estimate of theta under ``mode`` within ``opts.box``."""
    opts = opts or OptimOptions()
    started = time.perf_counter()
    if series.n < MIN_SERIES_LENGTH:
        logger.warning("estimate.short_series", n=series.n, minimum=MIN_SERIES_LENGTH)
    transform = BoxTransform(opts.box)
    try:
        starts = _start_points(opts, transform)
    except GqarchError:
        estimations_total.labels(mode=mode.kind, outcome="failed").inc()
        raise

    def objective(u: np.ndarray) -> float:
        try:
            return qml(transform.to_theta(u), series, mode).value
        except (GqarchError, ValueError):
            return math.inf

    runs = []
    start_objectives = []
    for index, u0 in enumerate(starts):
        f0 = objective(u0)
        start_objectives.append(f0)
        if not math.isfinite(f0):
            logger.info("estimate.start_skipped", start=index)
            continue
        simplex = np.vstack([u0, u0 + SIMPLEX_STEP * np.eye(5)])
        res = minimize(
            objective,
            u0,
            method="Nelder-Mead",
            options={
                "maxiter": opts.max_iters,
                "xatol": opts.x_tol,
                "fatol": opts.f_tol,
                "initial_simplex": simplex,
            },
        )
        theta_k = transform.to_theta(res.x)
        value_k = float(res.fun)
        if opts.use_gradient:
            theta_k, value_k = _polish(theta_k, value_k, series, mode, opts)
        runs.append((index, theta_k.canonical(), value_k, res.status == 0, int(res.nit)))
        logger.debug("estimate.start_done", start=index, objective=value_k, iterations=int(res.nit), status=int(res.status))

    if not runs:
        estimations_total.labels(mode=mode.kind, outcome="failed").inc()
        raise NoFeasibleStartError(len(starts), "objective is not finite at any start")

    best_value = min(run[2] for run in runs)
    center = opts.box.center().as_array()
    ties = [run for run in runs if run[2] <= best_value + opts.f_tol]
    _, theta_hat, _, converged, iterations = min(
        ties,
        key=lambda run: (float(np.linalg.norm(run[1].as_array() - center)), tuple(run[1].as_array())),
    )
    final = qml(theta_hat, series, mode)
    at_boundary = transform.boundary_flags(theta_hat)

    warnings: List[str] = []
    if any(at_boundary):
        names = [name for name, flag in zip(PARAM_NAMES, at_boundary) if flag]
        warnings.append(f"estimate on the box boundary: {', '.join(names)}")
    if at_boundary[4] or _flat_in_d(theta_hat, series, mode, opts.box):
        warnings.append("d weakly identified: c at its lower bound or objective flat in d")
    if final.floor_activated:
        warnings.append(f"variance floor activated (omega={theta_hat.omega:.3g})")
    for message in warnings:
        logger.warning("estimate.flag", message=message)

    elapsed = time.perf_counter() - started
    estimations_total.labels(mode=mode.kind, outcome="converged" if converged else "not_converged").inc()
    estimation_seconds.labels(mode=mode.kind).observe(elapsed)
    logger.info(
        "estimate.done",
        mode=mode.label,
        objective=final.value,
        converged=converged,
        starts=len(runs),
        seconds=round(elapsed, 3),
    )
    return EstimateResult(
        theta_hat=theta_hat,
        objective=final.value,
        mode=mode,
        converged=converged,
        iterations=iterations,
        starts_used=len(runs),
        at_boundary=at_boundary,
        floor_activated=final.floor_activated,
        warnings=tuple(warnings),
        start_objectives=tuple(start_objectives),
    )


def _coord_name(coord: Union[int, str]) -> str:
    if isinstance(coord, str):
        if coord not in PARAM_NAMES:
            raise ValueError(f"unknown coordinate {coord!r}; expected one of {PARAM_NAMES}")
        return coord
    return PARAM_NAMES[coord]


def profile_objective(
    series: SamplePath,
    mode: PastMode,
    theta: Theta,
    coord: Union[int, str],
    grid: Sequence[float],
) -> List[Tuple[float, float]]:
    """L along one coordinate with the other four held at ``theta``."""
    name = _coord_name(coord)
    return [(float(v), qml(theta.replace(**{name: float(v)}), series, mode).value) for v in grid]
