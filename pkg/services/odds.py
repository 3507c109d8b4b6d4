"""Odds-ratio estimators, mean absolute deviation from one, and intercept/threshold adjustment.

All matrices are |A| x |A| with entry (j, k) the odds of Y=1 in group j
divided by the odds in group k. Undefined entries are NaN.
"""
import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from services.dataset import Dataset
from services.exceptions import DatasetError, EmptyCellError
from services.logistic import LogisticModel
from services.simgen import ZDistribution

logger = logging.getLogger(__name__)

DEFAULT_NU = 20000
MAD_ROW = "mad_from_one"

# (group or None for a sample shared by all groups, count, rng) -> count x p matrix
ZSampler = Callable[[Optional[int], int, np.random.Generator], np.ndarray]


class Estimator(Enum):
    """How an odds-ratio matrix was obtained."""
    EOR = "EOR"
    LOR = "LOR"
    MCLOR = "MCLOR"
    INTADJ = "INTADJ"


def mad_from_one(values: np.ndarray, diagonal_included: bool = False) -> float:
    """Mean of |rho - 1| over off-diagonal entries, or over all entries when flagged.

    NaN entries are skipped and counted in a warning. A 1x1 matrix has no
    off-diagonal entries and scores 0; a matrix whose selected entries are all
    undefined scores NaN.
    """
    values = np.asarray(values, dtype=float)
    k = values.shape[0]
    mask = np.ones((k, k), dtype=bool)
    if not diagonal_included:
        np.fill_diagonal(mask, False)
    selected = values[mask]
    defined = selected[~np.isnan(selected)]
    undefined = selected.size - defined.size
    if undefined:
        logger.warning("mad_from_one: %d undefined odds-ratio entries skipped", undefined)
    if selected.size == 0:
        return 0.0
    if defined.size == 0:
        return float("nan")
    return float(np.mean(np.abs(defined - 1.0)))


@dataclass(frozen=True, eq=False)
class OddsRatioMatrix:
    """Pairwise odds ratios with their mad from one under the chosen convention."""
    values: np.ndarray
    estimator: Estimator
    diagonal_included: bool = False
    group_names: Tuple[str, ...] = ()

    @property
    def mad_from_one(self) -> float:
        return mad_from_one(self.values, self.diagonal_included)

    @property
    def undefined_count(self) -> int:
        return int(np.isnan(self.values).sum())

    def mad(self, diagonal_included: bool) -> float:
        return mad_from_one(self.values, diagonal_included)

    def with_convention(self, diagonal_included: bool) -> "OddsRatioMatrix":
        return dataclasses.replace(self, diagonal_included=diagonal_included)

    def to_frame(self) -> pd.DataFrame:
        names = list(self.group_names) or [f"g{a + 1}" for a in range(self.values.shape[0])]
        return pd.DataFrame(self.values, index=pd.Index(names, name="group"), columns=names)

    def to_csv(self, path: str) -> None:
        """Matrix rows under a header of group names, then a ``mad_from_one`` line."""
        frame = self.to_frame()
        with open(path, "w", encoding="utf-8", newline="") as handle:
            frame.to_csv(handle)
            handle.write(f"{MAD_ROW},{self.mad_from_one!r}\n")

    @classmethod
    def from_csv(cls, path: str, estimator: Estimator = Estimator.EOR,
                 diagonal_included: bool = False) -> "OddsRatioMatrix":
        """Inverse of to_csv; the trailing mad line is checked for presence only."""
        frame = pd.read_csv(path, index_col=0, keep_default_na=False, na_values=[""],
                            float_precision="round_trip")
        if frame.empty or frame.index[-1] != MAD_ROW:
            raise DatasetError(f"{path}: missing trailing {MAD_ROW} line")
        matrix = frame.iloc[:-1].astype(float)
        if list(matrix.index.astype(str)) != list(matrix.columns):
            raise DatasetError(f"{path}: row and column group names differ")
        return cls(values=matrix.to_numpy(), estimator=estimator,
                   diagonal_included=diagonal_included, group_names=tuple(matrix.columns))


def _ratio_matrix(odds: np.ndarray, estimator: Estimator, diagonal_included: bool,
                  group_names: Sequence[str]) -> OddsRatioMatrix:
    with np.errstate(invalid="ignore", divide="ignore"):
        values = odds[:, None] / odds[None, :]
    np.fill_diagonal(values, 1.0)
    return OddsRatioMatrix(values=values, estimator=estimator,
                           diagonal_included=diagonal_included, group_names=tuple(group_names))


def empirical_or(labels: Sequence[int], groups: Sequence[int], num_groups: Optional[int] = None,
                 diagonal_included: bool = False,
                 group_names: Sequence[str] = ()) -> OddsRatioMatrix:
    """Counting estimate (n_j^1 / n_j^0) / (n_k^1 / n_k^0).

    A group without positives or without negatives makes its row and column undefined.
    """
    labels = np.asarray(labels, dtype=np.int64)
    groups = np.asarray(groups, dtype=np.int64)
    if num_groups is None:
        num_groups = len(group_names) or (int(groups.max()) + 1 if groups.size else 0)
    counts = np.zeros((num_groups, 2), dtype=np.int64)
    np.add.at(counts, (groups, labels), 1)
    defined = (counts[:, 0] > 0) & (counts[:, 1] > 0)
    odds = np.full(num_groups, np.nan)
    odds[defined] = counts[defined, 1] / counts[defined, 0]
    if not defined.all():
        logger.warning("Empirical odds undefined for %d group(s) lacking a label",
                       int((~defined).sum()))
    return _ratio_matrix(odds, Estimator.EOR, diagonal_included,
                         group_names or [f"g{a + 1}" for a in range(num_groups)])


def dataset_or(data: Dataset, diagonal_included: bool = False) -> OddsRatioMatrix:
    """empirical_or over a Dataset's own labels and groups."""
    return empirical_or(data.label, data.group, data.num_groups, diagonal_included,
                        data.group_names)


def conditional_lor(model: LogisticModel, diagonal_included: bool = False) -> OddsRatioMatrix:
    """exp((beta_j + offset_j) - (beta_k + offset_k)); the same for every z."""
    effect = model.beta_a + model.group_intercept_offsets
    values = np.exp(effect[:, None] - effect[None, :])
    np.fill_diagonal(values, 1.0)
    return OddsRatioMatrix(values=values, estimator=Estimator.LOR,
                           diagonal_included=diagonal_included, group_names=model.group_names)


def mc_group_prob(model: LogisticModel, group: int, z_samples: np.ndarray) -> float:
    """Monte Carlo P(Y=1 | A=group): the mean of the model probability over z_samples."""
    z_samples = np.atleast_2d(np.asarray(z_samples, dtype=float))
    eta = (model.beta0 + model.group_intercept_offsets[group] + model.beta_a[group]
           + z_samples @ model.beta_z)
    return float(np.mean(expit(eta)))


def mc_lor(model: LogisticModel, z_sampler: ZSampler, nu: int = DEFAULT_NU,
           rng: Optional[np.random.Generator] = None, diagonal_included: bool = False,
           common_random_numbers: bool = True,
           estimator: Estimator = Estimator.MCLOR) -> OddsRatioMatrix:
    """Odds ratios from Monte Carlo group probabilities.

    With ``common_random_numbers`` one sample of nu rows serves every group;
    otherwise the sampler is asked for each group's conditional sample.
    """
    if nu < 1:
        raise ValueError("nu must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    shared = z_sampler(None, nu, rng) if common_random_numbers else None
    probs = np.array([
        mc_group_prob(model, j, shared if shared is not None else z_sampler(j, nu, rng))
        for j in range(model.num_groups)
    ])
    degenerate = (probs <= 0.0) | (probs >= 1.0)
    if degenerate.any():
        logger.warning("Monte Carlo group probability saturated for %d group(s)",
                       int(degenerate.sum()))
    odds = np.where(degenerate, np.nan, probs / (1.0 - probs))
    return _ratio_matrix(odds, estimator, diagonal_included, model.group_names)


def generator_z_sampler(z_dist: ZDistribution) -> ZSampler:
    """Fresh draws from a known generator; Z is independent of A by construction."""

    def sample(group: Optional[int], count: int, rng: np.random.Generator) -> np.ndarray:
        return z_dist.sample(count, rng)

    return sample


def empirical_z_sampler(data: Dataset) -> ZSampler:
    """Resample observed Z rows: pooled for a shared sample, group-restricted otherwise."""

    def sample(group: Optional[int], count: int, rng: np.random.Generator) -> np.ndarray:
        rows = np.arange(data.n) if group is None else np.flatnonzero(data.group == group)
        if rows.size == 0:
            raise DatasetError(f"no Z rows to resample for group {group}")
        return data.z[rng.choice(rows, size=count, replace=True)]

    return sample


def intercept_offsets(reference: Dataset) -> np.ndarray:
    """log(zeta_1 / zeta_0) per group, zeta_y being the group's share of label 1 - y."""
    counts = reference.cell_counts().astype(float)
    for a in range(reference.num_groups):
        for y in (0, 1):
            if counts[a, y] == 0:
                raise EmptyCellError(reference.group_names[a], y, context="intercept adjustment")
    totals = counts.sum(axis=1)
    zeta_1 = counts[:, 0] / totals
    zeta_0 = counts[:, 1] / totals
    return np.log(zeta_1 / zeta_0)


def intercept_adjust(model: LogisticModel, reference: Dataset) -> LogisticModel:
    """Copy of ``model`` whose group offsets undo the reference data's group label rates.

    Only the offsets change. This assumes selection is independent of Z given
    (Y, A); nothing checks that.
    """
    if reference.num_groups != model.num_groups:
        raise ValueError("reference data and model disagree on the number of groups")
    return dataclasses.replace(model, group_intercept_offsets=intercept_offsets(reference))


def threshold_equiv(beta0: float, beta0_new: float, tau: float) -> float:
    """Threshold for intercept beta0 that labels like intercept beta0_new at threshold tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return float(expit(logit(tau) - (beta0_new - beta0)))


def offsets_to_group_thresholds(model: LogisticModel) -> np.ndarray:
    """Per-group thresholds that make the offset-free model label like ``model``."""
    return np.array([
        threshold_equiv(model.beta0, model.beta0 + offset, model.threshold)
        for offset in model.group_intercept_offsets
    ])
