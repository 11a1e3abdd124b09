#!/usr/bin/env python3

import math
import unittest

import numpy as np
from scipy import special

from lgcp.covariance import CovarianceModel
from lgcp.errors import InvalidInputError
from lgcp.gaussian_field import field_operator
from lgcp.grid import build_grid
from lgcp.mc_likelihood import (
    MCLikelihoodPlan,
    MCTheta,
    build_plan,
    default_search_box,
    joint_draws,
    log_ratio_r,
    mc_loglik,
    mc_mle,
)
from lgcp.mcmc import Priors
from lgcp.models import UnitypeModel


class RatioTests(unittest.TestCase):
    def setUp(self) -> None:
        self.grid = build_grid((0, 0, 1, 1), nx=8, ny=8)
        self.model = UnitypeModel(self.grid, CovarianceModel(sigma2=0.5, phi=0.2), beta=[4.0])
        self.rng = np.random.default_rng(0)
        self.theta0 = MCTheta(beta=[4.0], sigma=math.sqrt(0.5), phi=0.2)
        self.counts, self.fields = joint_draws(self.model, self.theta0, 3, self.rng)

    def test_ratio_is_zero_at_reference(self) -> None:
        values = log_ratio_r(self.model, self.counts, self.fields, self.theta0, self.theta0)
        np.testing.assert_array_equal(values, np.zeros(3))

    def test_intercept_shift_only_changes_poisson_part(self) -> None:
        theta = MCTheta(beta=[4.3], sigma=self.theta0.sigma, phi=self.theta0.phi)
        got = log_ratio_r(self.model, self.counts[0], self.fields[0], theta, self.theta0)
        mean0 = np.exp(self.model.log_exposure + 4.0 + self.grid.restrict(self.fields[0]))
        expected = 0.3 * self.counts[0].sum() - float(np.sum(mean0 * (math.exp(0.3) - 1.0)))
        self.assertAlmostEqual(got, expected, places=8)

    def test_covariance_change_adds_gaussian_ratio(self) -> None:
        theta = MCTheta(beta=[4.0], sigma=0.9, phi=0.3)
        field = self.fields[0]
        got = log_ratio_r(self.model, self.counts[0], field, theta, self.theta0)
        new_cov = CovarianceModel(sigma2=0.81, phi=0.3)
        old_cov = self.model.cov
        gaussian = field_operator(new_cov, self.grid).log_density(field - new_cov.mean_offset)
        gaussian -= field_operator(old_cov, self.grid).log_density(field - old_cov.mean_offset)
        self.assertAlmostEqual(got, gaussian, places=6)

    def test_theta_must_be_positive(self) -> None:
        with self.assertRaises(InvalidInputError):
            MCTheta(beta=[0.0], sigma=0.0, phi=1.0)

    def test_search_box_is_two_prior_sds(self) -> None:
        priors = Priors(log_sigma_var=0.04, log_phi_var=0.09, beta_var=1.0)
        box = default_search_box(self.theta0, priors)
        x0 = self.theta0.as_vector()
        np.testing.assert_allclose([hi - x for (_, hi), x in zip(box, x0)], [2.0, 0.4, 0.6])
        np.testing.assert_allclose([x - lo for (lo, _), x in zip(box, x0)], [2.0, 0.4, 0.6])


class LikelihoodTests(unittest.TestCase):
    def setUp(self) -> None:
        grid = build_grid((0, 0, 1, 1), nx=8, ny=8)
        self.model = UnitypeModel(grid, CovarianceModel(sigma2=1e-4, phi=0.2), beta=[5.0])
        self.counts = np.random.default_rng(1).poisson(math.exp(5.0) / 64, size=grid.shape).astype(float)
        self.n = float(self.counts.sum())
        # start close to the optimum so the importance weights stay balanced
        self.theta0 = MCTheta(beta=[math.log(self.n) + 0.05], sigma=0.01, phi=0.2)
        self.plan = build_plan(self.model, self.counts, self.theta0, 100, np.random.default_rng(2))

    def test_log_likelihood_is_exactly_zero_at_reference(self) -> None:
        result = mc_loglik(self.plan, self.counts, self.theta0)
        self.assertEqual(result.value, 0.0)
        self.assertEqual(result.ess_conditional, 100.0)

    def test_near_poisson_estimate_matches_log_rate(self) -> None:
        # exposure is 1 over the unit square so the MLE of the intercept is log(n)
        result = mc_mle(self.plan, self.counts, fixed=("sigma", "phi"))
        self.assertAlmostEqual(float(result.theta.beta[0]), math.log(self.n), delta=0.05)
        self.assertGreater(result.value, 0.0)
        self.assertFalse(result.at_boundary)

    def test_value_does_not_depend_on_draw_order(self) -> None:
        order = np.random.default_rng(5).permutation(self.plan.s)
        shuffled = MCLikelihoodPlan(
            model=self.model,
            theta0=self.theta0,
            conditional_fields=self.plan.conditional_fields[order],
            joint_counts=self.plan.joint_counts[order[::-1]],
            joint_fields=self.plan.joint_fields[order[::-1]],
        )
        for theta in (
            MCTheta(beta=[math.log(self.n) + 0.02], sigma=0.01, phi=0.2),
            MCTheta(beta=[math.log(self.n)], sigma=0.012, phi=0.3),
        ):
            expected = mc_loglik(self.plan, self.counts, theta)
            got = mc_loglik(shuffled, self.counts, theta)
            self.assertAlmostEqual(got.value, expected.value, places=10)
            self.assertAlmostEqual(got.ess_conditional, expected.ess_conditional, places=8)

    def test_all_fixed_returns_reference(self) -> None:
        result = mc_mle(self.plan, self.counts, fixed=("beta", "sigma", "phi"))
        self.assertIs(result.theta, self.theta0)
        self.assertEqual(result.value, 0.0)

    def test_unknown_fixed_name_rejected(self) -> None:
        with self.assertRaises(InvalidInputError):
            mc_mle(self.plan, self.counts, fixed=("gamma",))

    def test_tight_box_reports_boundary(self) -> None:
        x0 = self.theta0.as_vector()
        box = [(x0[0] - 0.01, x0[0] + 0.01), (x0[1] - 0.1, x0[1] + 0.1), (x0[2] - 0.1, x0[2] + 0.1)]
        result = mc_mle(self.plan, self.counts, search_box=box, fixed=("sigma", "phi"))
        self.assertTrue(result.at_boundary)
        self.assertTrue(any("boundary" in w for w in result.warnings))

    def test_plan_rejects_mismatched_draws(self) -> None:
        with self.assertRaises(InvalidInputError):
            MCLikelihoodPlan(
                model=self.model,
                theta0=self.theta0,
                conditional_fields=self.plan.conditional_fields,
                joint_counts=self.plan.joint_counts[:5],
                joint_fields=self.plan.joint_fields,
            )


class CrudeMonteCarloTests(unittest.TestCase):
    def test_ratio_matches_averaging_over_prior_draws(self) -> None:
        grid = build_grid((0, 0, 2, 1), nx=2, ny=1)
        model = UnitypeModel(grid, CovarianceModel(sigma2=1.0, phi=1.0), beta=[0.5])
        counts = np.array([[1.0, 4.0]])
        theta0 = MCTheta(beta=[0.5], sigma=1.0, phi=1.0)
        plan = build_plan(model, counts, theta0, 4000, np.random.default_rng(30), max_thin=16)
        rng = np.random.default_rng(31)

        def crude_log_likelihood(theta: MCTheta) -> float:
            rho = math.exp(-1.0 / theta.phi)
            cov = theta.sigma**2 * np.array([[1.0, rho], [rho, 1.0]])
            s = rng.multivariate_normal(np.full(2, -0.5 * theta.sigma**2), cov, size=400_000)
            eta = theta.beta[0] + s
            return float(special.logsumexp((counts.ravel() * eta - np.exp(eta)).sum(axis=1))) - math.log(s.shape[0])

        reference = crude_log_likelihood(theta0)
        for theta in (MCTheta(beta=[0.7], sigma=1.0, phi=1.0), MCTheta(beta=[0.5], sigma=1.2, phi=1.0)):
            expected = crude_log_likelihood(theta) - reference
            self.assertAlmostEqual(mc_loglik(plan, counts, theta).value, expected, delta=0.06)


if __name__ == "__main__":
    unittest.main()
