"""Blind (class-balanced) and equity-directed (class x group balanced) bootstraps."""
import logging
from typing import Dict, Optional

import numpy as np

from config.settings import BootstrapMode, BootstrapSpec, ReplacementPolicy
from services.dataset import Cell, Dataset, TrainTestValSplit, cell_order
from services.exceptions import ConfigError, DatasetError, EmptyCellError

logger = logging.getLogger(__name__)


def _rng(spec: BootstrapSpec, rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(spec.seed)


def sample_rows(rows: np.ndarray, count: int, policy: ReplacementPolicy,
                rng: np.random.Generator, force_replacement: bool = False) -> np.ndarray:
    """Draw ``count`` entries of ``rows``; with replacement when forced or when the cell is too small."""
    rows = np.asarray(rows, dtype=np.int64)
    replace = force_replacement or policy is ReplacementPolicy.ALWAYS or rows.size < count
    return rng.choice(rows, size=count, replace=replace)


def blind_bootstrap(split: TrainTestValSplit, data: Dataset, spec: BootstrapSpec,
                    rng: Optional[np.random.Generator] = None) -> Dataset:
    """n_pos positives (always with replacement) then n_neg negatives from the pooled training split."""
    if spec.n_pos is None or spec.n_neg is None or spec.n_pos < 1 or spec.n_neg < 1:
        raise ConfigError("blind bootstrap needs n_pos >= 1 and n_neg >= 1")
    rng = _rng(spec, rng)
    positives = split.pooled("train", label=1)
    negatives = split.pooled("train", label=0)
    if positives.size == 0:
        raise DatasetError("blind bootstrap: pooled positive training set is empty")
    if negatives.size == 0:
        raise DatasetError("blind bootstrap: pooled negative training set is empty")

    pos = sample_rows(positives, spec.n_pos, spec.replacement_policy, rng, force_replacement=True)
    neg = sample_rows(negatives, spec.n_neg, spec.replacement_policy, rng)
    logger.debug("Blind bootstrap: %d positives from %d, %d negatives from %d",
                 spec.n_pos, positives.size, spec.n_neg, negatives.size)
    return data.take(np.concatenate([pos, neg]))


def equity_bootstrap(split: TrainTestValSplit, data: Dataset, spec: BootstrapSpec,
                     rng: Optional[np.random.Generator] = None) -> Dataset:
    """Exactly M rows from every training cell R_a^y, cell by cell in (group, label) order."""
    m = spec.m_per_cell
    if m is None or m < 1:
        raise ConfigError("equity bootstrap needs m_per_cell >= 1")
    rng = _rng(spec, rng)
    chunks = []
    for a, y in cell_order(split.num_groups):
        rows = np.asarray(split.train[(a, y)], dtype=np.int64)
        if rows.size == 0:
            raise EmptyCellError(data.group_names[a], y, context="equity bootstrap")
        chunks.append(sample_rows(rows, m, spec.replacement_policy, rng))
    logger.debug("Equity bootstrap: M=%d over %d cells", m, len(chunks))
    return data.take(np.concatenate(chunks))


def bootstrap(split: TrainTestValSplit, data: Dataset, spec: BootstrapSpec,
              rng: Optional[np.random.Generator] = None) -> Dataset:
    """Dispatch on ``spec.mode``."""
    if spec.mode is BootstrapMode.BLIND:
        return blind_bootstrap(split, data, spec, rng)
    return equity_bootstrap(split, data, spec, rng)


def dirichlet_multinomial_counts(cell_size: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Per-row counts summing to ``m``: multinomial over Dirichlet(1, ..., 1) probabilities."""
    if cell_size < 1:
        raise ValueError("cell_size must be >= 1")
    probs = rng.dirichlet(np.ones(cell_size))
    return rng.multinomial(m, probs)


def equity_count_realization(data: Dataset, m: int, rng: np.random.Generator,
                             scheme: str = "bootstrap") -> np.ndarray:
    """Per-row multiplicities of one equity resample of ``data``; every cell totals ``m``.

    ``scheme="bootstrap"`` draws uniform multinomial counts (sampling with
    replacement); ``scheme="dirichlet"`` draws Dirichlet-multinomial counts.
    Both have expectation m / n_a^y per row.
    """
    counts = np.zeros(data.n, dtype=np.int64)
    cells: Dict[Cell, np.ndarray] = {
        cell: np.flatnonzero((data.group == cell[0]) & (data.label == cell[1]))
        for cell in cell_order(data.num_groups)
    }
    for (a, y), rows in cells.items():
        if rows.size == 0:
            raise EmptyCellError(data.group_names[a], y, context="equity count realization")
        if scheme == "dirichlet":
            counts[rows] = dirichlet_multinomial_counts(rows.size, m, rng)
        elif scheme == "bootstrap":
            counts[rows] = rng.multinomial(m, np.full(rows.size, 1.0 / rows.size))
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    return counts
