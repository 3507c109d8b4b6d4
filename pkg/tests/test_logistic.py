import logging
import math
import unittest
from unittest.mock import patch

import numpy as np
from scipy import linalg
from scipy.special import expit

from config.settings import BootstrapSpec, FitOptions, PRESETS_BY_NAME
from services.dataset import Dataset, partition_by_group_label, sequential_split
from services.exceptions import EmptyCellError, SingularHessianError
from services.logistic import (
    LogisticModel,
    classify,
    equity_loss_realization,
    equity_weighted_nll,
    equity_weights,
    fit_logistic,
    from_text,
    gradient,
    hessian,
    nll,
    predict_proba,
    to_text,
)
from services.resample import equity_bootstrap
from services.simgen import generate


def random_dataset(seed, n=40, p=3, num_groups=3):
    rng = np.random.default_rng(seed)
    return Dataset(z=rng.standard_normal((n, p)), group=rng.integers(0, num_groups, n),
                   label=rng.integers(0, 2, n), feature_names=tuple(f"z{k}" for k in range(p)),
                   group_names=tuple(f"g{a}" for a in range(num_groups)))


class TestLoss(unittest.TestCase):
    def test_zero_theta(self):
        """Test that the loss at zero is n log 2."""
        data = random_dataset(0, n=25)
        self.assertAlmostEqual(nll(np.zeros(1 + 3 + 3), data), 25 * math.log(2), places=12)

    def test_two_row_hand_value(self):
        """Test the loss against a two-row hand computation."""
        data = Dataset(z=[[1.0], [-1.0]], group=[0, 0], label=[1, 0],
                       feature_names=("x",), group_names=("a",))
        value = nll([0.0, 0.0, 1.0], data)
        self.assertAlmostEqual(value, 2 * math.log1p(math.exp(-1)), places=12)
        self.assertAlmostEqual(value, 0.6265, places=4)

    def test_saturation_is_stable(self):
        """Test that extreme linear predictors do not overflow."""
        data = Dataset(z=np.zeros((1, 0)), group=[0], label=[1], feature_names=(),
                       group_names=("a",))
        self.assertLess(nll([800.0, 0.0], data), 1e-300)
        self.assertAlmostEqual(nll([-800.0, 0.0], data), 800.0)

    def test_balanced_intercept_gradient_is_zero(self):
        """Test that balanced labels give a zero intercept gradient."""
        data = Dataset(z=np.zeros((4, 0)), group=[0, 0, 0, 0], label=[0, 1, 0, 1],
                       feature_names=(), group_names=("a",))
        self.assertEqual(gradient([0.0, 0.0], data)[0], 0.0)

    def test_gradient_matches_finite_differences(self):
        """Test the gradient against central differences on random instances."""
        rng = np.random.default_rng(2)
        h = 1e-6
        for instance in range(50):
            n, p, k = int(rng.integers(5, 51)), int(rng.integers(0, 6)), int(rng.integers(1, 5))
            data = Dataset(z=rng.standard_normal((n, p)), group=rng.integers(0, k, n),
                           label=rng.integers(0, 2, n),
                           feature_names=tuple(f"z{j}" for j in range(p)),
                           group_names=tuple(f"g{a}" for a in range(k)))
            weights = rng.uniform(0.5, 2.0, n) if instance % 2 else None
            theta = rng.standard_normal(1 + k + p)
            analytic = gradient(theta, data, weights)
            numeric = np.array([
                (nll(theta + h * e, data, weights) - nll(theta - h * e, data, weights)) / (2 * h)
                for e in np.eye(theta.size)
            ])
            rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1.0)
            with self.subTest(instance=instance, n=n, p=p, groups=k):
                self.assertLess(rel, 1e-5)

    def test_hessian_is_psd(self):
        """Test that the Hessian is positive semidefinite."""
        data = random_dataset(3)
        rng = np.random.default_rng(4)
        h = hessian(rng.standard_normal(7), data)
        for v in rng.standard_normal((100, 7)):
            self.assertGreaterEqual(v @ h @ v, -1e-10)

    def test_convex_along_segments(self):
        """Test convexity of the loss along random segments."""
        data = random_dataset(5)
        rng = np.random.default_rng(6)
        for _ in range(20):
            left, right = rng.standard_normal((2, 7)) * 2
            mid = nll((left + right) / 2, data)
            self.assertLessEqual(mid, (nll(left, data) + nll(right, data)) / 2 + 1e-9)


class TestPrediction(unittest.TestCase):
    def test_zero_model(self):
        """Test that a zero model predicts 0.5 and classifies ties as 1."""
        model = LogisticModel(beta0=0.0, beta_a=np.zeros(2), beta_z=np.zeros(2))
        self.assertEqual(predict_proba(model, 1, [3.0, -2.0]), 0.5)
        self.assertEqual(classify(model, 1, [3.0, -2.0]), 1)

    def test_intercept_only(self):
        """Test the probability of an intercept-only model."""
        model = LogisticModel(beta0=1.0, beta_a=np.zeros(1), beta_z=np.zeros(0))
        self.assertAlmostEqual(predict_proba(model, 0, []), 0.7311, places=4)

    def test_offsets_enter_the_linear_predictor(self):
        """Test that group offsets are added to the linear predictor."""
        rng = np.random.default_rng(7)
        model = LogisticModel(beta0=0.3, beta_a=rng.standard_normal(3), beta_z=rng.standard_normal(2),
                              group_intercept_offsets=np.log([9.0, 1.0, 0.25]))
        for _ in range(10):
            group, z = int(rng.integers(0, 3)), rng.standard_normal(2)
            direct = expit(0.3 + model.group_intercept_offsets[group] + model.beta_a[group]
                           + z @ model.beta_z)
            self.assertAlmostEqual(predict_proba(model, group, z), direct, places=14)

    def test_group_thresholds_replace_the_shared_threshold(self):
        """Test that per-group thresholds decide classification when set."""
        model = LogisticModel(beta0=0.0, beta_a=np.zeros(2), beta_z=np.zeros(0),
                              group_thresholds=np.array([0.4, 0.6]))
        self.assertEqual(classify(model, 0, []), 1)
        self.assertEqual(classify(model, 1, []), 0)
        data = Dataset(z=np.zeros((2, 0)), group=[0, 1], label=[1, 0], feature_names=(),
                       group_names=("g1", "g2"))
        np.testing.assert_array_equal(model.classify(data), [1, 0])
        with self.assertRaises(ValueError):
            LogisticModel(beta0=0.0, beta_a=np.zeros(2), beta_z=np.zeros(0),
                          group_thresholds=np.array([0.4, 1.0]))

    def test_invalid_threshold(self):
        """Test that a threshold outside (0, 1) is rejected."""
        with self.assertRaises(ValueError):
            LogisticModel(beta0=0.0, beta_a=np.zeros(2), beta_z=np.zeros(1), threshold=1.0)

    def test_wrong_predictor_length(self):
        """Test that a wrong predictor count raises ValueError."""
        model = LogisticModel(beta0=0.0, beta_a=np.zeros(2), beta_z=np.zeros(2))
        with self.assertRaises(ValueError):
            predict_proba(model, 0, [1.0])


class TestFit(unittest.TestCase):
    def test_recovers_generating_coefficients(self):
        """Test that a large simulated fit recovers the identified coefficients."""
        sim = generate(PRESETS_BY_NAME["zero-uncorrelated-3"].sim_config(50000, 20),
                       np.random.default_rng(21))
        model = fit_logistic(sim.data)
        self.assertTrue(model.converged)
        # Only beta0 + beta_a is identified with a full one-hot block.
        np.testing.assert_allclose(model.beta0 + model.beta_a,
                                   sim.theta.beta0 + sim.theta.beta_a, atol=0.05)
        np.testing.assert_allclose(model.beta_z, sim.theta.beta_z, atol=0.05)

    def test_rank_deficient_design_uses_ridge_quietly(self):
        """Test that the collinear design gets the ridge without a warning."""
        with self.assertLogs("services.logistic", level="DEBUG") as logs:
            model = fit_logistic(random_dataset(8, n=200))
        self.assertEqual(model.ridge_used, 1e-8)
        self.assertTrue(any("rank deficient" in line for line in logs.output))
        self.assertFalse([r for r in logs.records if r.levelno >= logging.WARNING])

    @patch("services.logistic.linalg.cho_factor", side_effect=linalg.LinAlgError("singular"))
    def test_singular_newton_system_warns(self, _mock_cho):
        """Test that a genuinely singular Newton system warns and raises."""
        with self.assertLogs("services.logistic", level="WARNING"):
            with self.assertRaises(SingularHessianError):
                fit_logistic(random_dataset(8, n=200))

    def test_balanced_groups_without_z(self):
        """Test that an equity set without Z gives equal group coefficients."""
        rng = np.random.default_rng(9)
        group = rng.choice(3, size=3000, p=[0.2, 0.3, 0.5])
        label = (rng.random(3000) < np.array([0.1, 0.3, 0.6])[group]).astype(int)
        data = Dataset(z=np.zeros((3000, 0)), group=group, label=label, feature_names=(),
                       group_names=("a", "b", "c"))
        split = sequential_split(partition_by_group_label(data), (1.0, 0.0, 0.0))
        equity = equity_bootstrap(split, data, BootstrapSpec(m_per_cell=400),
                                  np.random.default_rng(10))
        model = fit_logistic(equity)
        self.assertEqual(model.p, 0)
        self.assertLess(np.ptp(model.beta_a), 1e-6)
        np.testing.assert_allclose(model.predict_proba(equity), 0.5, atol=1e-6)

    def test_group_score_equation_on_equity_set(self):
        """Test that fitted probabilities sum to M within each equity group."""
        sim = generate(PRESETS_BY_NAME["discrete-3"].sim_config(6000, 5), np.random.default_rng(11))
        split = sequential_split(partition_by_group_label(sim.data), (1.0, 0.0, 0.0))
        m = 300
        equity = equity_bootstrap(split, sim.data, BootstrapSpec(m_per_cell=m),
                                  np.random.default_rng(12))
        opts = FitOptions()
        model = fit_logistic(equity, opts)
        mu = model.predict_proba(equity)
        tol = opts.resolve_tol(equity.n)
        for j in range(3):
            self.assertLess(abs(mu[equity.group == j].sum() - m), 3 * tol)

    def test_weights_equal_duplicated_rows(self):
        """Test that integer weights match duplicated rows."""
        data = random_dataset(13, n=60)
        w = np.random.default_rng(14).integers(1, 4, data.n)
        opts = FitOptions(tol_grad=1e-10, ridge=1e-3)
        weighted = fit_logistic(data, opts, weights=w)
        duplicated = fit_logistic(data.take(np.repeat(np.arange(data.n), w)), opts)
        np.testing.assert_allclose(weighted.theta, duplicated.theta, atol=1e-7)

    def test_nonconverged_fit_is_flagged(self):
        """Test that running out of iterations flags the model."""
        data = random_dataset(15, n=500)
        with self.assertLogs("services.logistic", level="WARNING"):
            model = fit_logistic(data, FitOptions(max_iter=1, tol_grad=1e-12, ridge=1e-4))
        self.assertFalse(model.converged)
        self.assertEqual(model.iterations, 1)


class TestEquityWeighting(unittest.TestCase):
    def setUp(self):
        self.data = random_dataset(16, n=400)
        self.theta = np.random.default_rng(17).standard_normal(7) * 0.3

    def test_cells_of_size_m_give_plain_nll(self):
        """Test that cells already of size M give the plain loss."""
        data = Dataset(z=np.zeros((4, 0)), group=[0, 0, 1, 1], label=[0, 1, 0, 1],
                       feature_names=(), group_names=("a", "b"))
        theta = [0.2, -0.1, 0.4]
        self.assertAlmostEqual(equity_weighted_nll(theta, data, 1), nll(theta, data), places=12)

    def test_linear_in_m(self):
        """Test that the weighted loss scales linearly with M."""
        single = equity_weighted_nll(self.theta, self.data, 50)
        double = equity_weighted_nll(self.theta, self.data, 100)
        self.assertAlmostEqual(double, 2 * single, places=9)

    def test_realizations_average_to_expectation(self):
        """Test that resampled losses average to the weighted loss."""
        m = 40
        rng = np.random.default_rng(18)
        for instance in range(10):
            theta = self.theta if instance == 0 else rng.standard_normal(7) * 0.3
            expected = equity_weighted_nll(theta, self.data, m)
            draws = np.array([equity_loss_realization(theta, self.data, m, rng)
                              for _ in range(200)])
            se = draws.std(ddof=1) / np.sqrt(draws.size)
            with self.subTest(instance=instance):
                self.assertLess(abs(draws.mean() - expected), 3 * se)

    def test_empty_cell(self):
        """Test that equity weights need every cell populated."""
        data = Dataset(z=np.zeros((3, 0)), group=[0, 0, 1], label=[0, 1, 0],
                       feature_names=(), group_names=("a", "b"))
        with self.assertRaises(EmptyCellError):
            equity_weights(data, 10)


class TestTextFormat(unittest.TestCase):
    def test_round_trip(self):
        """Test the text format round trip."""
        model = LogisticModel(beta0=-0.125, beta_a=np.array([0.1, -0.3]),
                              beta_z=np.array([1.0 / 3.0]), threshold=0.42,
                              group_intercept_offsets=np.array([0.0, math.log(9)]),
                              group_names=("white", "black"), feature_names=("age",))
        text = to_text(model)
        self.assertIn("group:black\t", text)
        loaded = from_text(text)
        np.testing.assert_array_equal(loaded.theta, model.theta)
        np.testing.assert_array_equal(loaded.group_intercept_offsets, model.group_intercept_offsets)
        self.assertEqual(loaded.threshold, 0.42)
        self.assertEqual(loaded.group_names, ("white", "black"))

    def test_group_thresholds_round_trip_as_threshold_lines(self):
        """Test that per-group thresholds are exported as threshold lines."""
        model = LogisticModel(beta0=0.0, beta_a=np.array([0.2, -0.2]), beta_z=np.zeros(0),
                              group_thresholds=np.array([0.3, 0.7]), group_names=("a", "b"))
        text = to_text(model)
        self.assertIn("threshold:b\t0.7\n", text)
        self.assertIn("offset:b\t0.0\n", text)
        loaded = from_text(text)
        np.testing.assert_array_equal(loaded.group_thresholds, [0.3, 0.7])
        np.testing.assert_array_equal(loaded.group_intercept_offsets, [0.0, 0.0])
        self.assertIsNone(from_text(to_text(LogisticModel(0.0, np.zeros(2), np.zeros(0))))
                          .group_thresholds)

    def test_unknown_line(self):
        """Test that an unknown coefficient line is rejected."""
        with self.assertRaises(ValueError):
            from_text("intercept\t0.0\nslope\t1.0\n")


if __name__ == "__main__":
    unittest.main()
