import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from gqarch.exceptions import InvalidParameterError, NonPositiveAcfError, NonPositiveVarianceError
from gqarch.likelihood import PastMode
from gqarch.montecarlo import (
    RESULT_COLUMNS,
    REFERENCE_RMSE,
    McDesign,
    McReport,
    acf_squares,
    compare_to_reference,
    memory_slope,
    memory_slope_from_acf,
    quick_design,
    reference_design,
    render_table,
    run_mc,
    summarize_cell,
    write_results_csv,
)
from gqarch.optimizer import EstimateResult, OptimOptions
from gqarch.params import Theta
from gqarch.simulator import SamplePath, SimConfig, simulate
from gqarch.tests.oracles import REFERENCE, SLOW_TESTS


def _result(theta: Theta, mode: PastMode, converged: bool = True) -> EstimateResult:
    return EstimateResult(
        theta_hat=theta,
        objective=0.0,
        mode=mode,
        converged=converged,
        iterations=0,
        starts_used=1,
        at_boundary=(False,) * 5,
        floor_activated=False,
    )


def truth_estimator(series: SamplePath, mode: PastMode, opts: OptimOptions) -> EstimateResult:
    return _result(series.theta_true, mode)


def moment_estimator(series: SamplePath, mode: PastMode, opts: OptimOptions) -> EstimateResult:
    """Cheap data-dependent stand-in for the QML estimator."""
    r = series.observations
    omega = float(np.sqrt(np.mean(r**2)))
    return _result(series.theta_true.replace(omega=omega, a=-float(np.mean(np.abs(r)))), mode)


def odd_failing_estimator(series: SamplePath, mode: PastMode, opts: OptimOptions) -> EstimateResult:
    if series.observations[0] > 0.0:
        raise NonPositiveVarianceError(1, 0.0)
    return _result(series.theta_true, mode, converged=series.observations[1] > 0.0)


def _design(reps: int = 3, n_list=(80, 120)) -> McDesign:
    return McDesign(theta_grid=(REFERENCE, REFERENCE.replace(d=0.3)), n_list=n_list, reps=reps, seed=5)


class RunMcTests(unittest.TestCase):
    def test_true_estimator_gives_zero_rmse(self):
        report = run_mc(McDesign(theta_grid=(REFERENCE,), n_list=(100,), reps=1), estimator=truth_estimator)
        cell = report.cells[0]
        self.assertEqual(cell.rmse, (0.0,) * 5)
        self.assertEqual(cell.bias, (0.0,) * 5)
        self.assertEqual(cell.failures, 0)

    def test_cells_follow_theta_then_n_order(self):
        report = run_mc(_design(), estimator=moment_estimator)
        self.assertEqual([(c.theta0.d, c.n) for c in report.cells], [(0.2, 80), (0.2, 120), (0.3, 80), (0.3, 120)])
        self.assertTrue(all(c.reps_completed == 3 for c in report.cells))

    def test_worker_count_does_not_change_results(self):
        design = _design()
        serial = run_mc(design, workers=1, estimator=moment_estimator)
        parallel = run_mc(design, workers=2, estimator=moment_estimator)
        self.assertEqual(serial.cells, parallel.cells)

    def test_failures_and_non_convergence_are_counted(self):
        report = run_mc(_design(reps=12), estimator=odd_failing_estimator)
        for cell in report.cells:
            self.assertEqual(cell.reps_completed + cell.failures, 12)
            self.assertEqual(len(cell.estimates), cell.reps_completed)
        self.assertGreater(sum(cell.failures for cell in report.cells), 0)

    def test_rejects_l2_infeasible_designs(self):
        with self.assertRaises(ValidationError):
            McDesign(theta_grid=(REFERENCE.replace(gamma=0.9, c=0.5, d=0.4),), n_list=(100,), reps=1)


class SummaryTests(unittest.TestCase):
    def test_rmse_decomposes_into_bias_and_spread(self):
        rng = np.random.default_rng(3)
        estimates = REFERENCE.as_array() + rng.normal(0.01, 0.05, size=(40, 5))
        cell = summarize_cell(REFERENCE, 1000, 40, estimates.tolist())
        rmse = np.array(cell.rmse)
        bias = np.array(cell.bias)
        spread = estimates.std(axis=0)
        np.testing.assert_allclose(rmse**2, bias**2 + spread**2, rtol=1e-10)

    def test_empty_cell(self):
        cell = summarize_cell(REFERENCE, 1000, 5, [])
        self.assertEqual(cell.failures, 5)
        self.assertTrue(np.all(np.isnan(cell.rmse)))


class ReferenceTableTests(unittest.TestCase):
    def _report_at_reference(self) -> McReport:
        design = reference_design(omega0s=(0.1,), d0s=(0.2, 0.4), n_list=(1000,), reps=100)
        cells = []
        for theta in design.theta_grid:
            reference = REFERENCE_RMSE[(theta.omega, 1000, theta.d)]
            cell = summarize_cell(theta, 1000, 100, [])
            cells.append(cell.model_copy(update={"rmse": reference, "reps_completed": 100, "failures": 0}))
        return McReport(cells=tuple(cells), wall_time=1.5, seed=0)

    def test_reference_grid(self):
        design = reference_design()
        self.assertEqual(len(design.theta_grid), 12)
        self.assertEqual(design.n_list, (1000, 5000))
        self.assertEqual(len(REFERENCE_RMSE), 24)
        self.assertEqual(REFERENCE_RMSE[(0.1, 1000, 0.2)], (0.083, 0.047, 0.045, 0.109, 0.031))
        quick = quick_design()
        self.assertEqual((quick.reps, quick.n_list), (20, (500,)))

    def test_comparison_ratios(self):
        comparisons = compare_to_reference(self._report_at_reference())
        for item in comparisons:
            self.assertEqual(item.ratio, (1.0,) * 5)

    def test_unknown_cells_have_no_reference(self):
        report = McReport(cells=(summarize_cell(REFERENCE.replace(gamma=0.5), 1000, 1, []),), wall_time=0.0, seed=0)
        self.assertIsNone(compare_to_reference(report)[0].reference)

    def test_rendered_table(self):
        text = render_table(self._report_at_reference())
        self.assertIn("omega0 = 0.1", text)
        self.assertIn("  1000  0.20    0.083    0.047    0.045    0.109    0.031", text)
        self.assertIn("0.40    0.073    0.029", text)

    def test_results_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "mc.csv"
            write_results_csv(path, self._report_at_reference(), metadata={"command": "mc", "seed": "0"})
            self.assertTrue(path.read_text(encoding="utf-8").startswith("# command = mc\n# seed = 0\n"))
            frame = pd.read_csv(path, comment="#")
        self.assertEqual(list(frame.columns), RESULT_COLUMNS)
        self.assertEqual(len(frame), 2)
        self.assertAlmostEqual(frame.loc[0, "rmse_d"], 0.109)
        self.assertEqual(int(frame.loc[1, "failures"]), 0)


class MemoryDiagnosticTests(unittest.TestCase):
    def test_iid_squares_are_uncorrelated(self):
        theta = Theta(gamma=0.0, omega=1.0, a=0.0, d=0.2, c=0.0)
        series = simulate(theta, SimConfig(n=4000, seed=12, presample=False))
        acov = acf_squares(series, 20)
        self.assertTrue(np.all(np.abs(acov[1:]) <= 4.0 / np.sqrt(4000) * acov[0]))

    def test_lag_limit(self):
        series = SamplePath(observations=np.arange(1.0, 101.0))
        acf_squares(series, 24)
        with self.assertRaises(InvalidParameterError):
            acf_squares(series, 25)

    def test_exact_power_law(self):
        lags = np.arange(0, 101, dtype=float)
        acov = np.empty(101)
        acov[0] = 1.0
        acov[1:] = lags[1:] ** -0.4
        slope = memory_slope_from_acf(acov, 2, 100)
        self.assertAlmostEqual(slope.slope, -0.4, delta=1e-10)
        self.assertAlmostEqual(slope.d_implied, 0.3, delta=1e-10)

    def test_non_positive_autocovariance(self):
        acov = np.array([1.0, 0.5, 0.3, -0.01, 0.2])
        with self.assertRaises(NonPositiveAcfError) as ctx:
            memory_slope_from_acf(acov, 2, 4)
        self.assertEqual(ctx.exception.lag, 3)

    def test_lag_window_validation(self):
        with self.assertRaises(InvalidParameterError):
            memory_slope_from_acf(np.ones(10), 1, 5)
        with self.assertRaises(InvalidParameterError):
            memory_slope_from_acf(np.ones(10), 5, 10)


@unittest.skipUnless(SLOW_TESTS, "set GQARCH_SLOW_TESTS=1 to run Monte Carlo acceptance checks")
class AcceptanceTests(unittest.TestCase):
    def test_long_memory_slope(self):
        series = simulate(REFERENCE.replace(d=0.3), SimConfig(n=200_000, seed=7, presample=False))
        slope = memory_slope(series, 20, 500)
        self.assertTrue(0.15 < slope.d_implied < 0.45)

    def test_positive_autocovariances(self):
        series = simulate(REFERENCE.replace(d=0.3), SimConfig(n=100_000, seed=9, presample=False))
        self.assertTrue(np.all(acf_squares(series, 200)[10:] > 0.0))

    def test_quick_design_is_in_the_reference_range(self):
        report = run_mc(quick_design(seed=3), workers=4)
        cell = report.cells[0]
        self.assertGreaterEqual(cell.reps_completed, 15)
        reference = np.array(REFERENCE_RMSE[(0.1, 1000, 0.2)])
        self.assertTrue(np.all(np.array(cell.rmse) < 4.0 * reference))

    def _assert_near_reference(self, cell, absolute: float, relative: float):
        reference = np.array(REFERENCE_RMSE[(cell.theta0.omega, cell.n, cell.theta0.d)])
        tolerance = np.maximum(absolute, relative * reference)
        np.testing.assert_array_less(np.abs(np.array(cell.rmse) - reference), tolerance)

    def test_reference_cell_at_n_1000(self):
        design = reference_design(omega0s=(0.1,), d0s=(0.2,), n_list=(1000,), reps=100, seed=11)
        cell = run_mc(design, workers=4).cells[0]
        self.assertGreaterEqual(cell.reps_completed, 90)
        self._assert_near_reference(cell, 0.02, 0.40)

    def test_reference_cell_at_n_5000(self):
        design = reference_design(omega0s=(0.1,), d0s=(0.2,), n_list=(5000,), reps=50, seed=12)
        cell = run_mc(design, workers=4).cells[0]
        self.assertGreaterEqual(cell.reps_completed, 45)
        self._assert_near_reference(cell, 0.01, 0.50)

    def test_rmse_trends_in_the_small_omega_block(self):
        design = reference_design(omega0s=(0.01,), d0s=(0.2, 0.4), n_list=(1000, 5000), reps=50, seed=13)
        rmse = {(cell.theta0.d, cell.n): np.array(cell.rmse) for cell in run_mc(design, workers=4).cells}
        for d0 in (0.2, 0.4):
            self.assertGreaterEqual(int(np.sum(rmse[(d0, 5000)] < rmse[(d0, 1000)])), 4, msg=f"d0={d0}")
        # d and c
        self.assertTrue(np.all(rmse[(0.4, 5000)][3:] > rmse[(0.2, 5000)][3:]))

    def test_median_estimation_error_shrinks_with_n(self):
        design = McDesign(theta_grid=(REFERENCE,), n_list=(500, 4000), reps=20, seed=17, opts=OptimOptions(seed=17))
        medians = [
            float(np.median(np.linalg.norm(np.array(cell.estimates) - REFERENCE.as_array(), axis=1)))
            for cell in run_mc(design, workers=4).cells
        ]
        self.assertLess(medians[1], medians[0])


if __name__ == "__main__":
    unittest.main()
