"""Synthetic data for the odds-ratio simulation study.

Draw order on a single Generator is fixed: theta (beta0, extra beta_a,
beta_z), then the Z distribution (mean, then Phi), then groups, Z rows and
labels. Same SimConfig and seed therefore give bit-identical data.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from config.settings import CovMode, MeanMode, SimConfig, ZMode
from services.dataset import Dataset

logger = logging.getLogger(__name__)

FIXED_GROUP_EFFECTS = (-0.5, 0.2, 1.0)
CHOLESKY_JITTER = 1e-10


@dataclass(frozen=True)
class TrueTheta:
    """Ground-truth coefficients of the generating logistic model."""
    beta0: float
    beta_a: np.ndarray
    beta_z: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.beta_a, self.beta_z])


@dataclass(frozen=True)
class ZDistribution:
    """Law of Z: i.i.d. Bernoulli(0.5) entries, or N(mean, chol @ chol.T) rows."""
    mode: ZMode
    p: int
    mean: Optional[np.ndarray] = None
    chol: Optional[np.ndarray] = None

    @property
    def covariance(self) -> np.ndarray:
        if self.mode is ZMode.DISCRETE:
            return 0.25 * np.eye(self.p)
        return self.chol @ self.chol.T

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.mode is ZMode.DISCRETE:
            return rng.binomial(1, 0.5, size=(n, self.p)).astype(float)
        return self.mean + rng.standard_normal((n, self.p)) @ self.chol.T


@dataclass(frozen=True)
class SimulatedData:
    """A generated dataset together with the laws that produced it."""
    data: Dataset
    theta: TrueTheta
    z_dist: ZDistribution


def make_theta(cfg: SimConfig, rng: np.random.Generator) -> TrueTheta:
    """beta0 and beta_z ~ Unif(-0.1, 0.1); beta_a fixed for the first three groups.

    For |A| in {3, 10} the first three group effects are (-0.5, 0.2, 1.0) and
    any others are Unif(-0.1, 0.1). Other sizes draw every group effect.
    """
    beta0 = float(rng.uniform(-0.1, 0.1))
    if cfg.num_groups in (3, 10):
        extras = rng.uniform(-0.1, 0.1, size=cfg.num_groups - 3)
        beta_a = np.concatenate([FIXED_GROUP_EFFECTS, extras])
    else:
        beta_a = rng.uniform(-0.1, 0.1, size=cfg.num_groups)
    beta_z = rng.uniform(-0.1, 0.1, size=cfg.p)
    return TrueTheta(beta0=beta0, beta_a=beta_a, beta_z=beta_z)


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError:
        logger.warning("Cholesky of Sigma failed; retrying with %.0e jitter", CHOLESKY_JITTER)
        return linalg.cholesky(sigma + CHOLESKY_JITTER * np.eye(sigma.shape[0]), lower=True)


def make_z_distribution(cfg: SimConfig, rng: np.random.Generator) -> ZDistribution:
    """Draw the dataset-level mean and covariance (continuous mode only)."""
    if cfg.z_mode is ZMode.DISCRETE:
        return ZDistribution(mode=ZMode.DISCRETE, p=cfg.p)
    if cfg.mean_mode is MeanMode.RANDOM:
        mean = rng.standard_normal(cfg.p)
    else:
        mean = np.zeros(cfg.p)
    if cfg.cov_mode is CovMode.RANDOM:
        phi = rng.standard_normal((cfg.p, cfg.p))
        chol = _cholesky(phi.T @ phi)
    else:
        chol = np.eye(cfg.p)
    return ZDistribution(mode=ZMode.CONTINUOUS, p=cfg.p, mean=mean, chol=chol)


def gen_z(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """n x p matrix of non-group predictors."""
    return make_z_distribution(cfg, rng).sample(cfg.n, rng)


def gen_groups(n: int, num_groups: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform i.i.d. group indices."""
    return rng.integers(0, num_groups, size=n)


def gen_labels(z: np.ndarray, groups: np.ndarray, theta: TrueTheta,
               rng: np.random.Generator) -> np.ndarray:
    """Bernoulli labels through the logistic link."""
    eta = theta.beta0 + theta.beta_a[groups] + z @ theta.beta_z
    return (rng.random(groups.shape[0]) < expit(eta)).astype(np.int64)


def generate(cfg: SimConfig, rng: Optional[np.random.Generator] = None) -> SimulatedData:
    """Generate one synthetic dataset; ``rng`` defaults to one seeded by cfg.seed."""
    cfg.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    theta = make_theta(cfg, rng)
    z_dist = make_z_distribution(cfg, rng)
    groups = gen_groups(cfg.n, cfg.num_groups, rng)
    z = z_dist.sample(cfg.n, rng)
    labels = gen_labels(z, groups, theta, rng)
    data = Dataset(
        z=z,
        group=groups,
        label=labels,
        feature_names=tuple(f"z{k + 1}" for k in range(cfg.p)),
        group_names=tuple(f"g{a + 1}" for a in range(cfg.num_groups)),
    )
    logger.debug("Generated n=%d p=%d |A|=%d (%s), positives=%d",
                 cfg.n, cfg.p, cfg.num_groups, cfg.z_mode.value, int(labels.sum()))
    return SimulatedData(data=data, theta=theta, z_dist=z_dist)
