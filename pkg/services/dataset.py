"""Group-annotated labeled datasets, (group, label) partitions, and sequential splits."""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import DatasetSchema
from services.exceptions import DatasetError

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    """Predictor matrix Z with a separate group column and binary labels.

    The one-hot encoding of the group column only exists in
    ``design_matrix()``; ``z`` holds the non-group predictors.
    """
    z: np.ndarray
    group: np.ndarray
    label: np.ndarray
    feature_names: Tuple[str, ...]
    group_names: Tuple[str, ...]

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        group = np.asarray(self.group, dtype=np.int64).reshape(-1)
        label = np.asarray(self.label, dtype=np.int64).reshape(-1)
        n = group.shape[0]
        if z.ndim == 1 and z.shape[0] == 0:
            z = z.reshape(n, len(self.feature_names))
        if z.ndim != 2:
            raise DatasetError(f"z must be a 2-d matrix, got shape {z.shape}")
        if z.shape[0] != n or label.shape[0] != n:
            raise DatasetError(
                f"row counts differ: z={z.shape[0]} group={n} label={label.shape[0]}"
            )
        if z.shape[1] != len(self.feature_names):
            raise DatasetError(
                f"z has {z.shape[1]} columns but {len(self.feature_names)} feature names"
            )
        num_groups = len(self.group_names)
        if n > 0 and num_groups == 0:
            raise DatasetError("a non-empty dataset needs at least one group")
        if n > 0 and (group.min() < 0 or group.max() >= num_groups):
            raise DatasetError(f"group indices must lie in [0, {num_groups})")
        if n > 0 and not np.isin(label, (0, 1)).all():
            raise DatasetError("labels must be exactly 0 or 1")
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "group", _frozen(group))
        object.__setattr__(self, "label", _frozen(label))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "group_names", tuple(self.group_names))

    @property
    def n(self) -> int:
        return int(self.group.shape[0])

    @property
    def p(self) -> int:
        return int(self.z.shape[1])

    @property
    def num_groups(self) -> int:
        return len(self.group_names)

    def take(self, indices: Sequence[int]) -> "Dataset":
        """Rows at ``indices``, in the given order (repeats allowed)."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            z=self.z[idx],
            group=self.group[idx],
            label=self.label[idx],
            feature_names=self.feature_names,
            group_names=self.group_names,
        )

    def one_hot_groups(self) -> np.ndarray:
        onehot = np.zeros((self.n, self.num_groups))
        onehot[np.arange(self.n), self.group] = 1.0
        return onehot

    def design_matrix(self) -> np.ndarray:
        """[1 | one-hot(A) | Z], one row per sample."""
        return np.hstack([np.ones((self.n, 1)), self.one_hot_groups(), self.z])

    def cell_counts(self) -> np.ndarray:
        """|A| x 2 matrix of n_a^y."""
        counts = np.zeros((self.num_groups, 2), dtype=np.int64)
        np.add.at(counts, (self.group, self.label), 1)
        return counts

    def to_frame(self, group_column: str = "group", label_column: str = "label") -> pd.DataFrame:
        frame = pd.DataFrame(self.z, columns=list(self.feature_names))
        frame.insert(0, group_column, [self.group_names[g] for g in self.group])
        frame[label_column] = self.label
        return frame


@dataclass(frozen=True)
class GroupLabelPartition:
    """The 2|A| cells G_a^y as row-index lists, in original row order."""
    cells: Dict[Cell, Tuple[int, ...]]
    num_groups: int

    @property
    def counts(self) -> Dict[Cell, int]:
        return {cell: len(rows) for cell, rows in self.cells.items()}


@dataclass(frozen=True)
class TrainTestValSplit:
    """Per-cell train/test/val index lists (R_a^y, T_a^y, V_a^y)."""
    train: Dict[Cell, Tuple[int, ...]]
    test: Dict[Cell, Tuple[int, ...]]
    val: Dict[Cell, Tuple[int, ...]]
    fractions: Tuple[float, float, float]
    num_groups: int

    def pooled(self, part: str, label: Optional[int] = None) -> np.ndarray:
        """Concatenate cells of ``part`` in (group, label) order, optionally for one label."""
        cells = getattr(self, part)
        chunks = [
            np.asarray(cells[(a, y)], dtype=np.int64)
            for a in range(self.num_groups)
            for y in (0, 1)
            if label is None or y == label
        ]
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def cell_order(num_groups: int) -> List[Cell]:
    """Cells in (group, label) lexicographic order."""
    return [(a, y) for a in range(num_groups) for y in (0, 1)]


def partition_by_group_label(data: Dataset) -> GroupLabelPartition:
    """Split row indices by (group, label); empty cells are kept with no rows."""
    cells: Dict[Cell, Tuple[int, ...]] = {}
    for a, y in cell_order(data.num_groups):
        rows = np.flatnonzero((data.group == a) & (data.label == y))
        cells[(a, y)] = tuple(int(i) for i in rows)
    return GroupLabelPartition(cells=cells, num_groups=data.num_groups)


def sequential_split(part: GroupLabelPartition,
                     fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)) -> TrainTestValSplit:
    """Order-preserving prefix/middle/suffix split of every cell.

    Train and test take floor(f * m) rows; validation takes the remainder.
    """
    f_train, f_test, f_val = fractions
    if min(fractions) < 0 or abs(f_train + f_test + f_val - 1.0) > 1e-12:
        raise DatasetError(f"split fractions must be nonnegative and sum to 1, got {fractions}")

    train, test, val = {}, {}, {}
    for cell, rows in part.cells.items():
        m = len(rows)
        n_train = math.floor(f_train * m)
        n_test = math.floor(f_test * m)
        train[cell] = rows[:n_train]
        test[cell] = rows[n_train:n_train + n_test]
        val[cell] = rows[n_train + n_test:]
    return TrainTestValSplit(
        train=train, test=test, val=val, fractions=tuple(fractions), num_groups=part.num_groups
    )


def load_csv(path: str, schema: Optional[DatasetSchema] = None) -> Dataset:
    """Read a comma-separated UTF-8 file into a Dataset.

    Group levels are numbered by first appearance. Row numbers in errors
    count data rows from 1.
    """
    schema = schema or DatasetSchema()
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise DatasetError(f"{path}: file has no header") from e

    columns = list(frame.columns)
    for column in (schema.group_column, schema.label_column):
        if column not in columns:
            raise DatasetError(f"{path}: missing column {column!r}")
    if schema.feature_columns is None:
        features = [c for c in columns if c not in (schema.group_column, schema.label_column)]
    else:
        features = list(schema.feature_columns)
        for column in features:
            if column not in columns:
                raise DatasetError(f"{path}: missing column {column!r}")

    z = np.zeros((len(frame), len(features)))
    for j, column in enumerate(features):
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            raise DatasetError(
                f"non-numeric value {frame[column].iloc[row]!r} in column {column!r}", row=row + 1
            )
        z[:, j] = values.to_numpy(dtype=float)

    labels = frame[schema.label_column].str.strip()
    bad = np.flatnonzero(~labels.isin(["0", "1"]).to_numpy())
    if bad.size:
        row = int(bad[0])
        raise DatasetError(f"label {labels.iloc[row]!r} is not 0 or 1", row=row + 1)

    codes, levels = pd.factorize(frame[schema.group_column], sort=False)
    logger.info("Loaded %d rows, %d features, %d groups from %s",
                len(frame), len(features), len(levels), path)
    return Dataset(
        z=z,
        group=codes,
        label=labels.astype(int).to_numpy(),
        feature_names=tuple(features),
        group_names=tuple(str(level) for level in levels),
    )


def write_csv(data: Dataset, path: str, schema: Optional[DatasetSchema] = None) -> None:
    """Write ``data`` in the format load_csv reads back."""
    schema = schema or DatasetSchema()
    frame = data.to_frame(schema.group_column, schema.label_column)
    frame.to_csv(path, index=False, float_format="%.17g")
