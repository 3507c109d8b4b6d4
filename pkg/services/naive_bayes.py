"""Naive Bayes over the group label and binary Z features, with Laplace smoothing."""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from services.dataset import Dataset
from services.exceptions import DatasetError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NaiveBayesModel:
    """Counting estimates of P(Y), P(A | Y) and P(Z_k = 1 | Y).

    ``group_cond[a, y]`` is P(A=a | Y=y); ``feature_cond[k, y]`` is P(Z_k=1 | Y=y).
    """
    prior: np.ndarray
    group_cond: np.ndarray
    feature_cond: np.ndarray
    smoothing: float = 1.0
    group_names: Tuple[str, ...] = ()
    feature_names: Tuple[str, ...] = ()

    @property
    def num_groups(self) -> int:
        return int(self.group_cond.shape[0])

    def log_joint(self, group: np.ndarray, z: np.ndarray) -> np.ndarray:
        """n x 2 matrix of log P(Y=y) + log P(A=a|y) + sum_k log P(Z_k=z_k|y)."""
        log_on = np.log(self.feature_cond)
        log_off = np.log1p(-self.feature_cond)
        return (np.log(self.prior)[None, :]
                + np.log(self.group_cond[group])
                + z @ log_on + (1.0 - z) @ log_off)

    def predict_proba(self, data: Dataset) -> np.ndarray:
        joint = self.log_joint(data.group, data.z)
        return np.exp(joint[:, 1] - logsumexp(joint, axis=1))


def _check_binary(data: Dataset) -> None:
    if data.p and not np.isin(data.z, (0.0, 1.0)).all():
        bad = [name for k, name in enumerate(data.feature_names)
               if not np.isin(data.z[:, k], (0.0, 1.0)).all()]
        raise DatasetError(f"naive Bayes needs binary Z columns; non-binary: {', '.join(bad)}")


def fit_naive_bayes(data: Dataset, smoothing: float = 1.0) -> NaiveBayesModel:
    """Laplace-smoothed counting estimates; both classes must be present."""
    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    _check_binary(data)
    class_counts = np.bincount(data.label, minlength=2).astype(float)
    for y in (0, 1):
        if class_counts[y] == 0:
            raise DatasetError(f"naive Bayes needs rows of both classes; class {y} has none")

    prior = class_counts / class_counts.sum()
    cells = data.cell_counts().astype(float)
    group_cond = (cells + smoothing) / (class_counts + data.num_groups * smoothing)[None, :]

    on_counts = np.stack([data.z[data.label == y].sum(axis=0) for y in (0, 1)], axis=1)
    feature_cond = (on_counts + smoothing) / (class_counts + 2.0 * smoothing)[None, :]

    logger.debug("Naive Bayes fit: n=%d, prior(Y=1)=%.4f", data.n, prior[1])
    return NaiveBayesModel(
        prior=prior,
        group_cond=group_cond,
        feature_cond=feature_cond,
        smoothing=smoothing,
        group_names=data.group_names,
        feature_names=data.feature_names,
    )


def nb_posterior(model: NaiveBayesModel, group: int, z: Sequence[float]) -> float:
    """P(Y=1 | A=group, Z=z) under the fitted model."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if z.shape[1] != model.feature_cond.shape[0]:
        raise ValueError(f"expected {model.feature_cond.shape[0]} predictors, got {z.shape[1]}")
    joint = model.log_joint(np.array([group]), z)[0]
    return float(np.exp(joint[1] - logsumexp(joint)))
