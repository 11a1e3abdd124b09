#!/usr/bin/env python3

import math
import unittest

import numpy as np

from lgcp.covariance import CovarianceModel
from lgcp.errors import InsufficientDataError, InvalidInputError
from lgcp.grid import PointPattern, Window, build_grid
from lgcp.models import UnitypeModel, simulate
from lgcp.summary_stats import (
    KEstimate,
    estimate_K,
    fit_moments,
    fit_temporal_baseline,
    kernel_intensity,
    model_K_on_grid,
    moment_discrepancy,
    temporal_design,
)


def _brute_force_K(points: np.ndarray, window: Window, u: np.ndarray) -> np.ndarray:
    n = points.shape[0]
    out = np.zeros_like(u)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dx, dy = points[i] - points[j]
            weight = (window.width - abs(dx)) * (window.height - abs(dy)) / window.area
            out += (math.hypot(dx, dy) <= u) / weight
    return window.area / n**2 * out


class KEstimateTests(unittest.TestCase):
    def test_matches_explicit_pair_sum(self) -> None:
        window = Window(0, 0, 2, 1)
        rng = np.random.default_rng(0)
        points = rng.random((50, 2)) * [2.0, 1.0]
        estimate = estimate_K(PointPattern(points=points, window=window), u_max=0.3, n_bins=31)
        np.testing.assert_allclose(estimate.k_hat, _brute_force_K(points, window, estimate.u), rtol=1e-12)
        self.assertEqual(estimate.u[0], 0.0)
        self.assertAlmostEqual(estimate.u_max, 0.3)
        self.assertEqual(estimate.n, 50)

    def test_complete_spatial_randomness_is_unbiased(self) -> None:
        window = Window(0, 0, 1, 1)
        rng = np.random.default_rng(7)
        values = []
        for _ in range(40):
            n = rng.poisson(200)
            pattern = PointPattern(points=rng.random((n, 2)), window=window)
            values.append(estimate_K(pattern, u_max=0.1, n_bins=2).k_hat[-1])
        values = np.asarray(values)
        se = values.std(ddof=1) / math.sqrt(values.size)
        self.assertLess(abs(values.mean() - math.pi * 0.01), 3.0 * se)

    def test_default_range_and_limits(self) -> None:
        window = Window(0, 0, 4, 2)
        pattern = PointPattern(points=[[0.5, 0.5], [1.0, 1.0], [3.0, 1.5]], window=window)
        self.assertAlmostEqual(estimate_K(pattern).u_max, 0.5)
        with self.assertRaises(InvalidInputError):
            estimate_K(pattern, u_max=1.5)
        with self.assertRaises(InsufficientDataError):
            estimate_K(PointPattern(points=[[0.5, 0.5]], window=window))


class MomentFitTests(unittest.TestCase):
    def _exact(self, cov: CovarianceModel) -> KEstimate:
        window = Window(0, 0, 100, 100)
        u = np.linspace(0.0, 25.0, 101)
        return KEstimate(u=u, k_hat=model_K_on_grid(cov, u), n=500, area=window.area, window=window)

    def test_recovers_parameters_from_exact_curve(self) -> None:
        truth = CovarianceModel(sigma2=0.64, phi=5.0)
        estimate = self._exact(truth)
        fit = fit_moments(estimate)
        self.assertLess(fit.discrepancy, 1e-8)
        self.assertLessEqual(fit.discrepancy, moment_discrepancy(estimate, CovarianceModel(sigma2=0.7, phi=5.5)))
        self.assertAlmostEqual(fit.sigma, 0.8, delta=0.04)
        self.assertAlmostEqual(fit.phi, 5.0, delta=0.25)
        self.assertEqual(len(fit.starts), 25)
        self.assertAlmostEqual(fit.covariance().sigma2, fit.sigma**2)

    def test_discrepancy_is_zero_for_the_true_curve(self) -> None:
        truth = CovarianceModel(sigma2=0.64, phi=5.0)
        estimate = self._exact(truth)
        self.assertEqual(moment_discrepancy(estimate, truth), 0.0)
        self.assertGreater(moment_discrepancy(estimate, CovarianceModel(sigma2=1.0, phi=5.0)), 0.0)
        self.assertGreater(moment_discrepancy(estimate, CovarianceModel(sigma2=1.0, phi=5.0), w="inverse"), 0.0)

    def test_discrepancy_argument_checks(self) -> None:
        estimate = self._exact(CovarianceModel(sigma2=0.64, phi=5.0))
        with self.assertRaises(InvalidInputError):
            moment_discrepancy(estimate, CovarianceModel(), u0=30.0)
        with self.assertRaises(InvalidInputError):
            moment_discrepancy(estimate, CovarianceModel(), c=0.0)
        with self.assertRaises(InvalidInputError):
            moment_discrepancy(estimate, CovarianceModel(), w="triangular")

    def test_fit_beats_the_truth_on_a_simulated_pattern(self) -> None:
        grid = build_grid((0, 0, 100, 100), nx=64, ny=64)
        truth = CovarianceModel(sigma2=0.25, phi=12.66)
        sim = simulate(UnitypeModel(grid, truth, beta=[math.log(703 / 1e4)]), np.random.default_rng(17))
        estimate = estimate_K(sim.pattern)
        u0 = min(estimate.u_max, 25.0)
        fit = fit_moments(estimate)
        self.assertLessEqual(fit.discrepancy, moment_discrepancy(estimate, truth, u0=u0) + 1e-12)
        self.assertAlmostEqual(fit.discrepancy, moment_discrepancy(estimate, fit.covariance(), u0=u0), delta=1e-12)


class KernelIntensityTests(unittest.TestCase):
    def test_interior_cell_is_count_over_disc_area(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=4, ny=4)
        pattern = PointPattern(points=[[0.5, 0.5]], window=grid.window)
        surface = kernel_intensity(pattern, grid, bandwidth=0.2)
        self.assertAlmostEqual(float(surface[1, 1]), 1.0 / (math.pi * 0.04), delta=1e-3 / (math.pi * 0.04))
        self.assertEqual(float(surface[0, 0]), 0.0)

    def test_edge_correction_keeps_corners_level(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=10, ny=10)
        ticks = (np.arange(100) + 0.5) / 100
        xs, ys = np.meshgrid(ticks, ticks)
        pattern = PointPattern(points=np.column_stack([xs.ravel(), ys.ravel()]), window=grid.window)
        surface = kernel_intensity(pattern, grid, bandwidth=0.1)
        np.testing.assert_allclose(surface, 10000.0, rtol=0.1)

    def test_bandwidth_must_be_positive(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=4, ny=4)
        with self.assertRaises(InvalidInputError):
            kernel_intensity(PointPattern(points=np.zeros((0, 2)), window=grid.window), grid, 0.0)


class TemporalBaselineTests(unittest.TestCase):
    def test_recovers_season_weekday_and_trend(self) -> None:
        t = np.arange(730)
        angle = 2.0 * math.pi * t / 365.25
        weekday = np.array([0.0, 0.1, 0.0, -0.1, 0.2, 0.0, -0.3])
        eta = math.log(20.0) + 0.5 * (t / 730 - 0.5) + 0.3 * np.cos(angle) - 0.2 * np.sin(angle) + weekday[t % 7]
        counts = np.random.default_rng(11).poisson(np.exp(eta))
        fit = fit_temporal_baseline(counts, period=365.25, weekly=True)
        coef = fit.to_dict()
        self.assertEqual(fit.names[:4], ("intercept", "trend", "cos_1", "sin_1"))
        self.assertAlmostEqual(coef["intercept"], math.log(20.0), delta=0.08)
        self.assertAlmostEqual(coef["trend"], 0.5, delta=0.12)
        self.assertAlmostEqual(coef["cos_1"], 0.3, delta=0.06)
        self.assertAlmostEqual(coef["sin_1"], -0.2, delta=0.06)
        for d in range(1, 7):
            self.assertAlmostEqual(coef[f"weekday_{d}"], weekday[d], delta=0.12)
        self.assertAlmostEqual(float(fit.fitted.sum()), float(counts.sum()), delta=1e-3)
        self.assertAlmostEqual(float(fit.baseline.mean()), 1.0, places=12)

    def test_intercept_only_is_flat(self) -> None:
        fit = fit_temporal_baseline(np.array([3, 9, 0, 4]), trend=False)
        self.assertEqual(fit.names, ("intercept",))
        np.testing.assert_allclose(fit.baseline, 1.0)
        self.assertAlmostEqual(float(fit.coefficients[0]), math.log(4.0), delta=1e-8)

    def test_design_columns(self) -> None:
        design, names = temporal_design(14, period=7.0, weekly=True, harmonics=2)
        self.assertEqual(design.shape, (14, 2 + 4 + 6))
        self.assertEqual(names[-1], "weekday_6")
        np.testing.assert_array_equal(design[:, names.index("weekday_3")], np.tile([0, 0, 0, 1, 0, 0, 0], 2))
        self.assertEqual(temporal_design(1)[1], ("intercept",))

    def test_unidentifiable_or_empty_series(self) -> None:
        with self.assertRaises(InsufficientDataError):
            fit_temporal_baseline(np.array([2, 3, 4, 5, 6]), weekly=True)
        with self.assertRaises(InsufficientDataError):
            fit_temporal_baseline(np.zeros(5))
        with self.assertRaises(InvalidInputError):
            fit_temporal_baseline(np.array([1, -1, 2]))
        with self.assertRaises(InvalidInputError):
            fit_temporal_baseline(np.array([1, 2, 3]), period=-1.0)


if __name__ == "__main__":
    unittest.main()
