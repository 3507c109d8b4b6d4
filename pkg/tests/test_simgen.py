import unittest

import numpy as np

from config.settings import CovMode, MeanMode, SimConfig, ZMode, PRESETS_BY_NAME
from services.exceptions import ConfigError
from services.simgen import (
    TrueTheta,
    gen_groups,
    gen_labels,
    gen_z,
    generate,
    make_theta,
    make_z_distribution,
)


class TestMakeTheta(unittest.TestCase):
    def test_three_groups_fixed_effects(self):
        """Test the fixed effects for three groups."""
        theta = make_theta(SimConfig(num_groups=3, p=4), np.random.default_rng(0))
        np.testing.assert_array_equal(theta.beta_a, [-0.5, 0.2, 1.0])
        self.assertTrue(-0.1 < theta.beta0 < 0.1)
        self.assertTrue(np.all(np.abs(theta.beta_z) < 0.1))

    def test_ten_groups_extras_are_small(self):
        """Test that extra group effects are small for ten groups."""
        theta = make_theta(SimConfig(num_groups=10, p=4), np.random.default_rng(1))
        np.testing.assert_array_equal(theta.beta_a[:3], [-0.5, 0.2, 1.0])
        self.assertEqual(theta.beta_a.size, 10)
        self.assertTrue(np.all(np.abs(theta.beta_a[3:]) < 0.1))

    def test_deterministic(self):
        """Test that theta is repeatable under a seed."""
        cfg = SimConfig(num_groups=10, p=6)
        first = make_theta(cfg, np.random.default_rng(42))
        second = make_theta(cfg, np.random.default_rng(42))
        np.testing.assert_array_equal(first.as_vector(), second.as_vector())


class TestGenZ(unittest.TestCase):
    def test_discrete_column_means(self):
        """Test that discrete Z columns average near 0.5."""
        z = gen_z(SimConfig(n=1000, p=20, z_mode=ZMode.DISCRETE), np.random.default_rng(2))
        self.assertTrue(set(np.unique(z)) <= {0.0, 1.0})
        self.assertTrue(np.all(np.abs(z.mean(axis=0) - 0.5) < 0.05))

    def test_continuous_identity_variances(self):
        """Test unit variances for identity covariance."""
        cfg = SimConfig(n=10000, p=5, z_mode=ZMode.CONTINUOUS)
        z = gen_z(cfg, np.random.default_rng(3))
        np.testing.assert_allclose(np.diag(np.cov(z, rowvar=False)), 1.0, atol=0.1)

    def test_scalar_random_covariance(self):
        """Test the random covariance with one predictor."""
        cfg = SimConfig(n=20000, p=1, z_mode=ZMode.CONTINUOUS, cov_mode=CovMode.RANDOM)
        rng = np.random.default_rng(4)
        dist = make_z_distribution(cfg, rng)
        z = dist.sample(cfg.n, rng)
        self.assertAlmostEqual(float(np.var(z)) / float(dist.covariance[0, 0]), 1.0, delta=0.1)

    def test_random_covariance_converges(self):
        """Test that the sample covariance approaches the drawn one."""
        cfg = SimConfig(n=50000, p=4, z_mode=ZMode.CONTINUOUS,
                        mean_mode=MeanMode.RANDOM, cov_mode=CovMode.RANDOM)
        rng = np.random.default_rng(5)
        dist = make_z_distribution(cfg, rng)
        z = dist.sample(cfg.n, rng)
        sample_cov = np.cov(z, rowvar=False)
        rel = np.linalg.norm(sample_cov - dist.covariance) / np.linalg.norm(dist.covariance)
        self.assertLess(rel, 0.1)
        np.testing.assert_allclose(z.mean(axis=0), dist.mean,
                                   atol=0.05 * np.sqrt(np.diag(dist.covariance)).max() + 0.05)


class TestGroupsAndLabels(unittest.TestCase):
    def test_edge_cases(self):
        """Test group draws for zero rows and a single group."""
        rng = np.random.default_rng(6)
        self.assertEqual(gen_groups(0, 3, rng).size, 0)
        np.testing.assert_array_equal(gen_groups(5, 1, rng), np.zeros(5))

    def test_uniform_groups(self):
        """Test that groups are drawn uniformly."""
        groups = gen_groups(30000, 3, np.random.default_rng(7))
        freq = np.bincount(groups, minlength=3) / groups.size
        np.testing.assert_allclose(freq, 1 / 3, atol=0.02)

    def test_zero_theta_gives_fair_coin(self):
        """Test that a zero theta gives balanced labels."""
        theta = TrueTheta(beta0=0.0, beta_a=np.zeros(2), beta_z=np.zeros(3))
        rng = np.random.default_rng(8)
        labels = gen_labels(np.zeros((10000, 3)), rng.integers(0, 2, 10000), theta, rng)
        self.assertAlmostEqual(labels.mean(), 0.5, delta=0.02)

    def test_saturated_intercept(self):
        """Test that a saturated intercept labels every row 1."""
        theta = TrueTheta(beta0=20.0, beta_a=np.zeros(2), beta_z=np.zeros(1))
        rng = np.random.default_rng(9)
        labels = gen_labels(np.zeros((1000, 1)), np.zeros(1000, dtype=int), theta, rng)
        self.assertTrue(np.all(labels == 1))

    def test_group_effect_ordering(self):
        """Test that label rates follow the group effects."""
        sim = generate(PRESETS_BY_NAME["zero-uncorrelated-3"].sim_config(50000, 20),
                       np.random.default_rng(10))
        data = sim.data
        rate = [data.label[data.group == a].mean() for a in range(3)]
        self.assertGreater(rate[2], rate[0])

    def test_labels_follow_logistic_link(self):
        """Test that labels follow the logistic link."""
        sim = generate(PRESETS_BY_NAME["random-correlated-3"].sim_config(50000, 5),
                       np.random.default_rng(11))
        data, theta = sim.data, sim.theta
        eta = theta.beta0 + theta.beta_a[data.group] + data.z @ theta.beta_z
        mu = 1.0 / (1.0 + np.exp(-eta))
        edges = np.quantile(mu, np.linspace(0, 1, 11))
        bins = np.clip(np.searchsorted(edges, mu, side="right") - 1, 0, 9)
        for b in range(10):
            rows = bins == b
            se = np.sqrt(mu[rows].mean() * (1 - mu[rows].mean()) / rows.sum())
            self.assertLess(abs(data.label[rows].mean() - mu[rows].mean()), 4 * se + 1e-3)


class TestGenerate(unittest.TestCase):
    def test_bit_identical_under_same_seed(self):
        """Test that generation is bit-identical under one seed."""
        cfg = PRESETS_BY_NAME["random-correlated-10"].sim_config(2000, 6, seed=99)
        first, second = generate(cfg), generate(cfg)
        np.testing.assert_array_equal(first.data.z, second.data.z)
        np.testing.assert_array_equal(first.data.label, second.data.label)
        np.testing.assert_array_equal(first.data.group, second.data.group)

    def test_names_and_shapes(self):
        """Test generated names and shapes."""
        sim = generate(SimConfig(n=100, p=3, num_groups=3), np.random.default_rng(0))
        self.assertEqual(sim.data.feature_names, ("z1", "z2", "z3"))
        self.assertEqual(sim.data.group_names, ("g1", "g2", "g3"))
        self.assertEqual(sim.data.z.shape, (100, 3))

    def test_invalid_config(self):
        """Test that an invalid config is rejected."""
        with self.assertRaises(ConfigError):
            generate(SimConfig(n=0, p=3))


if __name__ == "__main__":
    unittest.main()
