import math
import unittest

import numpy as np
from pydantic import ValidationError
from scipy.special import zeta as scipy_zeta

from gqarch.env_config import DEFAULT_K4
from gqarch.exceptions import InfeasibleBoxError, InfeasibleParameterError, InvalidParameterError, ZetaDomainError
from gqarch.params import (
    ParamBox,
    Theta,
    b2_of,
    check_feasibility,
    project_into_box,
    stationary_variance,
    zeta_real,
)
from gqarch.tests.oracles import REFERENCE


class ZetaTests(unittest.TestCase):
    def test_zeta_two_is_pi_squared_over_six(self):
        self.assertAlmostEqual(zeta_real(2.0), math.pi**2 / 6.0, delta=1e-12)

    def test_zeta_near_the_pole(self):
        self.assertAlmostEqual(zeta_real(1.2), 5.591582441, delta=1e-6)

    def test_zeta_large_argument(self):
        self.assertAlmostEqual(zeta_real(50.0), 1.0, delta=1e-12)

    def test_matches_scipy_over_the_d_range(self):
        for s in (1.002, 1.05, 1.2, 1.4, 1.6, 1.8, 1.998, 3.0, 7.5):
            self.assertAlmostEqual(zeta_real(s) / float(scipy_zeta(s)), 1.0, delta=1e-10, msg=f"s={s}")

    def test_rejects_the_pole(self):
        for s in (1.0, 1.0 + 1e-7, 0.5, float("nan")):
            with self.assertRaises(ZetaDomainError):
                zeta_real(s)


class ThetaTests(unittest.TestCase):
    def test_rejects_out_of_model_values(self):
        for changes in ({"gamma": 1.0}, {"omega": -0.1}, {"d": 0.5}, {"d": 0.0}, {"a": float("inf")}):
            with self.assertRaises(ValidationError):
                REFERENCE.replace(**changes)

    def test_canonical_flips_a_and_c_together(self):
        theta = REFERENCE.replace(c=-0.2)
        canonical = theta.canonical()
        self.assertTrue(canonical.is_canonical)
        self.assertEqual(canonical.c, 0.2)
        self.assertEqual(canonical.a, 0.2)
        self.assertEqual(REFERENCE.canonical(), REFERENCE)

    def test_array_round_trip(self):
        self.assertEqual(Theta.from_array(REFERENCE.as_array()), REFERENCE)


class FeasibilityTests(unittest.TestCase):
    def test_b2_examples(self):
        self.assertAlmostEqual(b2_of(REFERENCE.replace(d=0.4)), 0.04 * 5.591582441, delta=1e-8)
        self.assertEqual(b2_of(REFERENCE.replace(c=0.0)), 0.0)
        self.assertAlmostEqual(b2_of(REFERENCE.replace(c=1.0, d=0.499)), 500.58, delta=0.01)

    def test_reference_design_is_l2_but_not_l4_feasible(self):
        report = check_feasibility(REFERENCE.replace(d=0.4))
        self.assertAlmostEqual(report.b2, 0.2237, delta=1e-4)
        self.assertTrue(report.l2_ok)
        self.assertFalse(report.l4_ok)
        self.assertAlmostEqual(report.slack_l2, 0.3 - report.b2, delta=1e-15)
        self.assertAlmostEqual(report.slack_l4, 0.3 - DEFAULT_K4 * 3.0 * report.b2**2, delta=1e-6 * DEFAULT_K4)

    def test_zero_c_is_always_feasible(self):
        for gamma in (0.0, 0.5, 0.999):
            report = check_feasibility(REFERENCE.replace(gamma=gamma, c=0.0))
            self.assertEqual(report.b2, 0.0)
            self.assertTrue(report.l2_ok)
            self.assertTrue(report.l4_ok)

    def test_infinite_fourth_moment(self):
        report = check_feasibility(REFERENCE.replace(c=0.0), mu4=float("inf"))
        self.assertTrue(report.l4_ok)
        self.assertEqual(report.slack_l4, 1.0 - REFERENCE.gamma)
        report = check_feasibility(REFERENCE, mu4=float("inf"))
        self.assertTrue(report.l2_ok)
        self.assertFalse(report.l4_ok)

    def test_strong_memory_violates_l2(self):
        report = check_feasibility(REFERENCE.replace(gamma=0.9, c=0.5, d=0.4))
        self.assertAlmostEqual(report.b2, 1.398, delta=1e-3)
        self.assertFalse(report.l2_ok)

    def test_rejects_invalid_moment_constants(self):
        with self.assertRaises(InvalidParameterError):
            check_feasibility(REFERENCE, mu4=0.5)
        with self.assertRaises(InvalidParameterError):
            check_feasibility(REFERENCE, k4=0.0)

    def test_stationary_variance(self):
        expected = (0.01 + 0.04) / (0.3 - b2_of(REFERENCE))
        self.assertAlmostEqual(stationary_variance(REFERENCE), expected, delta=1e-15)
        with self.assertRaises(InfeasibleParameterError):
            stationary_variance(REFERENCE.replace(gamma=0.9, c=0.5, d=0.4))


class ParamBoxTests(unittest.TestCase):
    def test_interior_point_is_unchanged(self):
        self.assertEqual(project_into_box(REFERENCE, ParamBox()), REFERENCE)

    def test_clips_gamma(self):
        projected = project_into_box(REFERENCE.replace(gamma=0.95), ParamBox())
        self.assertEqual(projected.gamma, 0.9)

    def test_rescales_c_onto_the_upper_b2_bound(self):
        projected = project_into_box(REFERENCE.replace(c=3.0), ParamBox())
        self.assertAlmostEqual(projected.c**2 * zeta_real(1.6), 0.99 - 0.7, delta=1e-12)
        self.assertAlmostEqual(projected.c, math.sqrt(0.29 / float(scipy_zeta(1.6))), delta=1e-10)

    def test_projection_keeps_the_sign_of_c_and_is_idempotent(self):
        box = ParamBox()
        projected = project_into_box(REFERENCE.replace(c=-3.0), box)
        self.assertLess(projected.c, 0.0)
        self.assertEqual(project_into_box(projected, box), projected)

    def test_empty_b2_band_raises(self):
        box = ParamBox(b2_lower_offset=0.99, b2_upper_offset=0.5)
        with self.assertRaises(InfeasibleBoxError):
            project_into_box(REFERENCE, box)

    def test_config_round_trip(self):
        box = ParamBox(gamma_bounds=(0.01, 0.8), b2_upper_ratio=50.0)
        self.assertEqual(ParamBox.from_config(box.to_config()), box)
        self.assertEqual(ParamBox.from_config({}), ParamBox())

    def test_center_lies_inside_the_box(self):
        box = ParamBox()
        center = box.center()
        lower, upper = box.b2_interval(center.gamma)
        self.assertTrue(lower <= b2_of(center) <= upper)
        np.testing.assert_array_equal(project_into_box(center, box).as_array(), center.as_array())

    def test_d_interval_stays_off_the_open_ends(self):
        lo, hi = ParamBox().d_interval()
        self.assertGreater(lo, 0.0)
        self.assertLess(hi, 0.5)


if __name__ == "__main__":
    unittest.main()
