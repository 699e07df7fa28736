"""Replicated simulate-and-estimate studies, RMSE tables and memory diagnostics."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gqarch.exceptions import GqarchError, InvalidParameterError, NonPositiveAcfError
from gqarch.likelihood import PastMode
from gqarch.observability.metrics import mc_replications_total, mc_wall_seconds
from gqarch.optimizer import EstimateResult, OptimOptions, estimate
from gqarch.params import PARAM_NAMES, Theta, check_feasibility
from gqarch.rng import InnovationKind, innovation_fourth_moment
from gqarch.simulator import SamplePath, SimConfig, simulate
from gqarch.workers import run_ordered

logger = structlog.get_logger(__name__)

Estimator = Callable[[SamplePath, PastMode, OptimOptions], EstimateResult]

# Reference RMSEs of (gamma, omega, a, d, c) keyed by (omega0, n, d0), for
# gamma0 = 0.7, a0 = -0.2, c0 = 0.2, Gaussian innovations, 100 replications.
REFERENCE_RMSE: Dict[Tuple[float, int, float], Tuple[float, float, float, float, float]] = {
    (0.1, 1000, 0.1): (0.091, 0.057, 0.035, 0.103, 0.035),
    (0.1, 1000, 0.2): (0.083, 0.047, 0.045, 0.109, 0.031),
    (0.1, 1000, 0.3): (0.071, 0.045, 0.047, 0.094, 0.043),
    (0.1, 1000, 0.4): (0.073, 0.029, 0.054, 0.097, 0.036),
    (0.1, 5000, 0.1): (0.031, 0.021, 0.012, 0.047, 0.015),
    (0.1, 5000, 0.2): (0.030, 0.015, 0.015, 0.041, 0.014),
    (0.1, 5000, 0.3): (0.028, 0.011, 0.025, 0.042, 0.013),
    (0.1, 5000, 0.4): (0.031, 0.014, 0.053, 0.059, 0.018),
    (0.01, 1000, 0.1): (0.070, 0.049, 0.030, 0.103, 0.029),
    (0.01, 1000, 0.2): (0.061, 0.043, 0.035, 0.089, 0.024),
    (0.01, 1000, 0.3): (0.066, 0.040, 0.045, 0.106, 0.044),
    (0.01, 1000, 0.4): (0.055, 0.042, 0.056, 0.105, 0.038),
    (0.01, 5000, 0.1): (0.025, 0.032, 0.011, 0.035, 0.013),
    (0.01, 5000, 0.2): (0.022, 0.028, 0.013, 0.032, 0.013),
    (0.01, 5000, 0.3): (0.025, 0.028, 0.025, 0.046, 0.016),
    (0.01, 5000, 0.4): (0.031, 0.031, 0.046, 0.096, 0.034),
    (0.001, 1000, 0.1): (0.086, 0.058, 0.026, 0.095, 0.037),
    (0.001, 1000, 0.2): (0.056, 0.043, 0.027, 0.084, 0.031),
    (0.001, 1000, 0.3): (0.053, 0.039, 0.046, 0.080, 0.029),
    (0.001, 1000, 0.4): (0.055, 0.047, 0.060, 0.122, 0.041),
    (0.001, 5000, 0.1): (0.022, 0.033, 0.009, 0.031, 0.012),
    (0.001, 5000, 0.2): (0.020, 0.030, 0.012, 0.028, 0.012),
    (0.001, 5000, 0.3): (0.022, 0.032, 0.024, 0.038, 0.014),
    (0.001, 5000, 0.4): (0.032, 0.037, 0.046, 0.098, 0.031),
}

REFERENCE_GAMMA0 = 0.7
REFERENCE_A0 = -0.2
REFERENCE_C0 = 0.2

RESULT_COLUMNS = (
    ["omega0", "d0", "n", "reps"]
    + [f"rmse_{name}" for name in PARAM_NAMES]
    + [f"bias_{name}" for name in PARAM_NAMES]
    + ["failures", "seed"]
)


class McDesign(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta_grid: Tuple[Theta, ...]
    n_list: Tuple[int, ...]
    reps: int = Field(ge=1)
    mode: PastMode = Field(default_factory=PastMode.presample)
    seed: int = Field(default=0, ge=0, lt=2**64)
    opts: OptimOptions = Field(default_factory=OptimOptions)
    innovation: InnovationKind = "normal"
    nu: Optional[float] = None

    @model_validator(mode="after")
    def _check_grid(self) -> "McDesign":
        if not self.theta_grid or not self.n_list:
            raise ValueError("theta_grid and n_list must not be empty")
        if any(n < 2 for n in self.n_list):
            raise ValueError("every n must be >= 2")
        mu4 = innovation_fourth_moment(self.innovation, self.nu)
        for theta in self.theta_grid:
            if not check_feasibility(theta, mu4=mu4).l2_ok:
                raise ValueError(f"theta {theta.model_dump()} violates the L2 condition")
        return self

    def cells(self) -> List[Tuple[Theta, int]]:
        return list(itertools.product(self.theta_grid, self.n_list))


class McCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta0: Theta
    n: int
    reps: int
    reps_completed: int
    failures: int
    rmse: Tuple[float, float, float, float, float]
    bias: Tuple[float, float, float, float, float]
    estimates: Tuple[Tuple[float, float, float, float, float], ...] = ()


class McReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    cells: Tuple[McCell, ...]
    wall_time: float
    seed: int


@dataclass(frozen=True)
class _McJob:
    theta0: Theta
    n: int
    cell: int
    rep: int
    design: McDesign
    estimator: Optional[Estimator]


def _mc_replication(job: _McJob) -> Optional[Tuple[float, ...]]:
    design = job.design
    cfg = SimConfig(
        n=job.n,
        seed=design.seed,
        innovation=design.innovation,
        nu=design.nu,
        presample=design.mode.kind == "presample",
        stream=(job.cell, job.rep),
    )
    estimator = job.estimator or estimate
    try:
        series = simulate(job.theta0, cfg)
        result = estimator(series, design.mode, design.opts)
    except GqarchError as exc:
        logger.info("mc.replication_failed", cell=job.cell, rep=job.rep, error=str(exc))
        return None
    if not result.converged:
        logger.info("mc.replication_not_converged", cell=job.cell, rep=job.rep)
        return None
    return tuple(float(v) for v in result.theta_hat.canonical().as_array())


def summarize_cell(theta0: Theta, n: int, reps: int, estimates: Sequence[Sequence[float]]) -> McCell:
    """RMSE and bias of the completed replications of one cell."""
    completed = len(estimates)
    if completed:
        errors = np.asarray(estimates, dtype=float) - theta0.as_array()
        bias = errors.mean(axis=0)
        rmse = np.sqrt((errors**2).mean(axis=0))
    else:
        bias = rmse = np.full(5, np.nan)
    return McCell(
        theta0=theta0,
        n=n,
        reps=reps,
        reps_completed=completed,
        failures=reps - completed,
        rmse=tuple(float(v) for v in rmse),
        bias=tuple(float(v) for v in bias),
        estimates=tuple(tuple(float(v) for v in row) for row in estimates),
    )


def run_mc(design: McDesign, workers: int = 1, estimator: Optional[Estimator] = None) -> McReport:
    """Run every (theta0, n) cell of the design; the cells do not depend on ``workers``."""
    started = time.perf_counter()
    cells = design.cells()
    jobs = [
        _McJob(theta0, n, cell, rep, design, estimator)
        for cell, (theta0, n) in enumerate(cells)
        for rep in range(design.reps)
    ]
    logger.info("mc.start", cells=len(cells), reps=design.reps, workers=workers, mode=design.mode.label)
    outcomes = run_ordered(_mc_replication, jobs, workers)

    summaries = []
    for cell, (theta0, n) in enumerate(cells):
        chunk = outcomes[cell * design.reps : (cell + 1) * design.reps]
        estimates = [o for o in chunk if o is not None]
        summary = summarize_cell(theta0, n, design.reps, estimates)
        mc_replications_total.labels(outcome="completed").inc(summary.reps_completed)
        mc_replications_total.labels(outcome="failed").inc(summary.failures)
        logger.info("mc.cell.done", cell=cell, n=n, completed=summary.reps_completed, failures=summary.failures)
        summaries.append(summary)

    wall_time = time.perf_counter() - started
    mc_wall_seconds.set(wall_time)
    return McReport(cells=tuple(summaries), wall_time=wall_time, seed=design.seed)


def reference_theta(omega0: float, d0: float) -> Theta:
    return Theta(gamma=REFERENCE_GAMMA0, omega=omega0, a=REFERENCE_A0, d=d0, c=REFERENCE_C0)


def reference_design(
    omega0s: Sequence[float] = (0.1, 0.01, 0.001),
    d0s: Sequence[float] = (0.1, 0.2, 0.3, 0.4),
    n_list: Sequence[int] = (1000, 5000),
    reps: int = 100,
    seed: int = 0,
    mode: Optional[PastMode] = None,
    opts: Optional[OptimOptions] = None,
) -> McDesign:
    """The reference grid: gamma0 = 0.7, a0 = -0.2, c0 = 0.2 over omega0 x d0 x n."""
    return McDesign(
        theta_grid=tuple(reference_theta(w, d) for w in omega0s for d in d0s),
        n_list=tuple(n_list),
        reps=reps,
        mode=mode or PastMode.presample(),
        seed=seed,
        opts=opts or OptimOptions(seed=seed),
    )


def quick_design(seed: int = 0) -> McDesign:
    """CI-sized variant: one reference cell, n = 500, 20 replications."""
    return reference_design(omega0s=(0.1,), d0s=(0.2,), n_list=(500,), reps=20, seed=seed)


@dataclass(frozen=True)
class ReferenceComparison:
    cell: McCell
    reference: Optional[Tuple[float, ...]]
    ratio: Optional[Tuple[float, ...]]


def _reference_key(cell: McCell) -> Optional[Tuple[float, int, float]]:
    theta = cell.theta0
    if (theta.gamma, theta.a, theta.c) != (REFERENCE_GAMMA0, REFERENCE_A0, REFERENCE_C0):
        return None
    key = (theta.omega, cell.n, round(theta.d, 10))
    return key if key in REFERENCE_RMSE else None


def compare_to_reference(report: McReport) -> List[ReferenceComparison]:
    """Ratios of reproduced to reference RMSE for the cells the reference table covers."""
    out = []
    for cell in report.cells:
        key = _reference_key(cell)
        if key is None:
            out.append(ReferenceComparison(cell, None, None))
            continue
        reference = REFERENCE_RMSE[key]
        ratio = tuple(float(r / ref) for r, ref in zip(cell.rmse, reference))
        out.append(ReferenceComparison(cell, reference, ratio))
    return out


def render_table(report: McReport) -> str:
    """Plain-text RMSE table: one block per omega0, rows by (n, d0)."""
    header = f"{'n':>6} {'d0':>5} " + " ".join(f"{name:>8}" for name in ("gamma", "omega", "a", "d", "c"))
    omegas: List[float] = []
    for cell in report.cells:
        if cell.theta0.omega not in omegas:
            omegas.append(cell.theta0.omega)

    lines: List[str] = ["Sample RMSE of QML estimates", ""]
    for omega0 in omegas:
        block = sorted(
            (cell for cell in report.cells if cell.theta0.omega == omega0),
            key=lambda cell: (cell.n, cell.theta0.d),
        )
        lines.append(f"omega0 = {omega0:g}")
        lines.append(header)
        lines.append("-" * len(header))
        previous_n = None
        for cell in block:
            n_label = str(cell.n) if cell.n != previous_n else ""
            previous_n = cell.n
            values = " ".join(f"{v:8.3f}" for v in cell.rmse)
            suffix = f"  ({cell.failures} failed)" if cell.failures else ""
            lines.append(f"{n_label:>6} {cell.theta0.d:5.2f} {values}{suffix}")
        lines.append("")
    lines.append(f"seed = {report.seed}, wall time = {report.wall_time:.1f}s")
    return "\n".join(lines) + "\n"


def results_frame(report: McReport) -> pd.DataFrame:
    rows = []
    for cell in report.cells:
        row = {"omega0": cell.theta0.omega, "d0": cell.theta0.d, "n": cell.n, "reps": cell.reps}
        row.update({f"rmse_{name}": v for name, v in zip(PARAM_NAMES, cell.rmse)})
        row.update({f"bias_{name}": v for name, v in zip(PARAM_NAMES, cell.bias)})
        row.update({"failures": cell.failures, "seed": report.seed})
        rows.append(row)
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def write_results_csv(path: str | Path, report: McReport, metadata: Optional[Dict[str, str]] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for key, value in (metadata or {}).items():
            handle.write(f"# {key} = {value}\n")
        results_frame(report).to_csv(handle, index=False, float_format="%.17g")


def acf_squares(series: SamplePath, max_lag: int) -> np.ndarray:
    """Autocovariances of r_t^2 at lags 0..max_lag (mean-centred, divisor n)."""
    n = series.n
    if max_lag < 0 or max_lag >= n / 4:
        raise InvalidParameterError(f"max_lag must satisfy 0 <= max_lag < n/4 = {n / 4:g}, got {max_lag}")
    x = series.observations**2
    x = x - x.mean()
    return np.array([float(np.dot(x[: n - k], x[k:])) / n for k in range(max_lag + 1)])


@dataclass(frozen=True)
class MemorySlope:
    slope: float
    d_implied: float


def memory_slope_from_acf(acov: np.ndarray, lag_lo: int, lag_hi: int) -> MemorySlope:
    """Least-squares slope of log acov against log lag; cov ~ k^(2d-1) gives d = (slope + 1)/2."""
    if not 2 <= lag_lo < lag_hi < len(acov):
        raise InvalidParameterError(f"need 2 <= lag_lo < lag_hi < {len(acov)}, got ({lag_lo}, {lag_hi})")
    lags = np.arange(lag_lo, lag_hi + 1)
    values = np.asarray(acov, dtype=float)[lag_lo : lag_hi + 1]
    bad = np.flatnonzero(values <= 0.0)
    if bad.size:
        raise NonPositiveAcfError(int(lags[bad[0]]), float(values[bad[0]]))
    slope, _ = np.polyfit(np.log(lags), np.log(values), 1)
    return MemorySlope(slope=float(slope), d_implied=float(0.5 * (slope + 1.0)))


def memory_slope(series: SamplePath, lag_lo: int, lag_hi: int) -> MemorySlope:
    return memory_slope_from_acf(acf_squares(series, lag_hi), lag_lo, lag_hi)
