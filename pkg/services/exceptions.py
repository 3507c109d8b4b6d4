"""Exception types raised by the equiboot services."""
from typing import Optional


class EquibootError(Exception):
    """Base class for all equiboot errors."""


class ConfigError(EquibootError, ValueError):
    """Invalid experiment configuration."""


class DatasetError(EquibootError, ValueError):
    """Malformed dataset, CSV file, or column schema."""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class EmptyCellError(EquibootError, ValueError):
    """A required (group, label) cell has no rows."""

    def __init__(self, group: str, label: int, context: str = ""):
        message = f"empty cell (group={group}, label={label})"
        if context:
            message = f"{context}: {message}"
        super().__init__(message)
        self.group = group
        self.label = label


class SingularHessianError(EquibootError):
    """The Newton system could not be solved."""


class CalibrationError(EquibootError):
    """No admissible decision threshold exists."""


class ReplicationError(EquibootError, RuntimeError):
    """A simulation replication failed; carries what is needed to rerun it."""

    def __init__(self, scenario: str, replication: int, seed: tuple, cause: str):
        super().__init__(
            f"scenario={scenario} replication={replication} seed={seed}: {cause}"
        )
        self.scenario = scenario
        self.replication = replication
        self.seed = seed
