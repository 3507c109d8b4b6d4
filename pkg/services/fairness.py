"""Group-wise sensitivity/specificity, equal-odds gap, and threshold calibration."""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from services.dataset import Dataset
from services.exceptions import CalibrationError, DatasetError

logger = logging.getLogger(__name__)


class ProbabilisticClassifier(Protocol):
    """Anything that scores a dataset with P(Y=1)."""

    def predict_proba(self, data: Dataset) -> np.ndarray:
        ...


@dataclass(frozen=True, eq=False)
class GroupMetrics:
    """Per-group sensitivity and specificity; NaN marks a zero denominator."""
    sens: np.ndarray
    spec: np.ndarray
    sens_range: float
    spec_range: float
    counts: np.ndarray
    group_names: Tuple[str, ...] = ()

    @property
    def absent_sens(self) -> Tuple[int, ...]:
        return tuple(int(a) for a in np.flatnonzero(np.isnan(self.sens)))

    @property
    def absent_spec(self) -> Tuple[int, ...]:
        return tuple(int(a) for a in np.flatnonzero(np.isnan(self.spec)))


def _range(values: np.ndarray) -> float:
    defined = values[~np.isnan(values)]
    if defined.size == 0:
        return 0.0
    return float(defined.max() - defined.min())


def group_sens_spec(pred: Sequence[int], truth: Sequence[int], groups: Sequence[int],
                    num_groups: Optional[int] = None,
                    group_names: Sequence[str] = ()) -> GroupMetrics:
    """sens_a = TP_a / (TP_a + FN_a), spec_a = 1 - FP_a / (FP_a + TN_a).

    Groups with an empty denominator get NaN and are left out of the ranges.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    groups = np.asarray(groups, dtype=np.int64)
    if not pred.shape == truth.shape == groups.shape:
        raise DatasetError(
            f"length mismatch: pred={pred.size} truth={truth.size} groups={groups.size}"
        )
    if num_groups is None:
        num_groups = len(group_names) or (int(groups.max()) + 1 if groups.size else 0)

    counts = np.zeros((num_groups, 2), dtype=np.int64)
    np.add.at(counts, (groups, truth), 1)
    predicted_pos = np.zeros((num_groups, 2), dtype=np.int64)
    np.add.at(predicted_pos, (groups, truth), pred)

    with np.errstate(invalid="ignore", divide="ignore"):
        sens = np.where(counts[:, 1] > 0, predicted_pos[:, 1] / counts[:, 1], np.nan)
        spec = np.where(counts[:, 0] > 0, 1.0 - predicted_pos[:, 0] / counts[:, 0], np.nan)

    metrics = GroupMetrics(
        sens=sens,
        spec=spec,
        sens_range=_range(sens),
        spec_range=_range(spec),
        counts=counts,
        group_names=tuple(group_names) or tuple(f"g{a + 1}" for a in range(num_groups)),
    )
    excluded = sorted(set(metrics.absent_sens) | set(metrics.absent_spec))
    if excluded:
        logger.warning("Groups excluded from ranges for lack of positives/negatives: %s",
                       ", ".join(metrics.group_names[a] for a in excluded))
    return metrics


def equal_odds_gap(metrics: GroupMetrics) -> float:
    """max(sens_range, spec_range); zero exactly when empirical equal odds holds."""
    return max(metrics.sens_range, metrics.spec_range)


def threshold_for_specificity(negative_scores: Sequence[float], target_spec: float) -> float:
    """Smallest observed score tau with #(scores < tau) >= ceil(target * m).

    When every negative must fall below tau, the next float above the largest
    score is returned.
    """
    scores = np.sort(np.asarray(negative_scores, dtype=float))
    m = scores.size
    if m == 0:
        raise CalibrationError("threshold calibration needs at least one negative row")
    if not 0.0 < target_spec < 1.0:
        raise ValueError(f"target specificity must be in (0, 1), got {target_spec}")
    needed = math.ceil(target_spec * m - 1e-9)

    candidates = np.unique(scores)
    below = np.searchsorted(scores, candidates, side="left")
    admissible = np.flatnonzero(below >= needed)
    if admissible.size:
        tau = float(candidates[admissible[0]])
    else:
        tau = float(np.nextafter(scores[-1], np.inf))
    if not 0.0 < tau < 1.0:
        raise CalibrationError(f"calibrated threshold {tau!r} falls outside (0, 1)")
    return tau


def calibrate_threshold(model: ProbabilisticClassifier, train: Dataset,
                        target_spec: float = 0.56) -> float:
    """Threshold giving overall training specificity >= target_spec."""
    scores = model.predict_proba(train)
    tau = threshold_for_specificity(scores[train.label == 0], target_spec)
    logger.debug("Calibrated tau=%.6f for target specificity %.3f", tau, target_spec)
    return tau


def group_thresholds(model: ProbabilisticClassifier, train: Dataset,
                     per_group_targets: Union[float, Sequence[float]] = 0.56) -> np.ndarray:
    """calibrate_threshold restricted to each group's rows."""
    targets = np.broadcast_to(np.asarray(per_group_targets, dtype=float), (train.num_groups,))
    scores = model.predict_proba(train)
    taus = np.zeros(train.num_groups)
    for a in range(train.num_groups):
        negatives = scores[(train.group == a) & (train.label == 0)]
        if negatives.size == 0:
            raise CalibrationError(f"group {train.group_names[a]} has no negative training rows")
        taus[a] = threshold_for_specificity(negatives, float(targets[a]))
    return taus


def labels_at_thresholds(scores: np.ndarray, groups: np.ndarray,
                         thresholds: Union[float, np.ndarray]) -> np.ndarray:
    """1 where the score reaches its (scalar or per-group) threshold."""
    thresholds = np.asarray(thresholds, dtype=float)
    cutoffs = thresholds[groups] if thresholds.ndim else thresholds
    return (scores >= cutoffs).astype(np.int64)
