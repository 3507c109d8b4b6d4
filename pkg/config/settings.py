"""Configuration for equiboot experiments: dataclasses, presets, file loader and runtime settings."""
import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml
from dotenv import load_dotenv

from services.exceptions import ConfigError

load_dotenv()


class ZMode(Enum):
    """Distribution family of the non-group predictors Z."""
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


class MeanMode(Enum):
    """Mean vector of continuous Z."""
    ZERO = "zero"
    RANDOM = "random"


class CovMode(Enum):
    """Covariance of continuous Z."""
    IDENTITY = "identity"
    RANDOM = "random"


class BootstrapMode(Enum):
    """Resampling scheme used to build a training set."""
    BLIND = "blind"
    EQUITY = "equity"


class ReplacementPolicy(Enum):
    """AUTO samples without replacement whenever the cell is large enough."""
    AUTO = "auto"
    ALWAYS = "always"


class RunMode(Enum):
    """Which harness an experiment config drives."""
    SIMULATE = "simulate"
    DATASET = "dataset"


@dataclass(frozen=True)
class SimConfig:
    """Synthetic data generator settings."""
    n: int = 50000
    p: int = 20
    num_groups: int = 3
    z_mode: ZMode = ZMode.DISCRETE
    mean_mode: MeanMode = MeanMode.ZERO
    cov_mode: CovMode = CovMode.IDENTITY
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"simulation n must be >= 1, got {self.n}")
        if self.p < 1:
            raise ConfigError(f"simulation p must be >= 1, got {self.p}")
        if self.num_groups < 2:
            raise ConfigError(f"num_groups must be >= 2, got {self.num_groups}")


@dataclass(frozen=True)
class ScenarioPreset:
    """One row of the simulation table: a Z family crossed with |A|."""
    name: str
    label: str
    num_groups: int
    z_mode: ZMode
    mean_mode: MeanMode = MeanMode.ZERO
    cov_mode: CovMode = CovMode.IDENTITY

    @property
    def correlated(self) -> bool:
        return self.z_mode is ZMode.CONTINUOUS and self.cov_mode is CovMode.RANDOM

    def sim_config(self, n: int, p: int, seed: int = 0) -> SimConfig:
        return SimConfig(
            n=n,
            p=p,
            num_groups=self.num_groups,
            z_mode=self.z_mode,
            mean_mode=self.mean_mode,
            cov_mode=self.cov_mode,
            seed=seed,
        )


def _build_presets() -> Tuple[ScenarioPreset, ...]:
    variants = [
        ("discrete", "Discrete", ZMode.DISCRETE, MeanMode.ZERO, CovMode.IDENTITY),
        ("zero-uncorrelated", "Continuous, zero mean, uncorrelated",
         ZMode.CONTINUOUS, MeanMode.ZERO, CovMode.IDENTITY),
        ("zero-correlated", "Continuous, zero mean, correlated",
         ZMode.CONTINUOUS, MeanMode.ZERO, CovMode.RANDOM),
        ("random-uncorrelated", "Continuous, random mean, uncorrelated",
         ZMode.CONTINUOUS, MeanMode.RANDOM, CovMode.IDENTITY),
        ("random-correlated", "Continuous, random mean, correlated",
         ZMode.CONTINUOUS, MeanMode.RANDOM, CovMode.RANDOM),
    ]
    presets = []
    for num_groups in (3, 10):
        for key, label, z_mode, mean_mode, cov_mode in variants:
            presets.append(ScenarioPreset(
                name=f"{key}-{num_groups}",
                label=label,
                num_groups=num_groups,
                z_mode=z_mode,
                mean_mode=mean_mode,
                cov_mode=cov_mode,
            ))
    return tuple(presets)


# Order is part of the seeding contract: a scenario's index feeds its RNG streams.
SCENARIO_PRESETS: Tuple[ScenarioPreset, ...] = _build_presets()
PRESETS_BY_NAME: Dict[str, ScenarioPreset] = {p.name: p for p in SCENARIO_PRESETS}


def scenario_index(name: str) -> int:
    """Position of a preset in SCENARIO_PRESETS."""
    for index, preset in enumerate(SCENARIO_PRESETS):
        if preset.name == name:
            return index
    raise ConfigError(f"unknown scenario preset: {name!r}")


@dataclass(frozen=True)
class BootstrapSpec:
    """Resampling settings.

    ``m_per_cell``, ``n_pos`` and ``n_neg`` may be left as None; the harness
    then resolves them from the data (see ``ExperimentOrchestrator``).
    """
    mode: BootstrapMode = BootstrapMode.EQUITY
    m_per_cell: Optional[int] = None
    n_pos: Optional[int] = None
    n_neg: Optional[int] = None
    replacement_policy: ReplacementPolicy = ReplacementPolicy.AUTO
    seed: int = 0
    max_m_per_cell: int = 500000

    def validate(self) -> None:
        for name in ("m_per_cell", "n_pos", "n_neg"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"bootstrap {name} must be >= 1, got {value}")
        if self.max_m_per_cell < 1:
            raise ConfigError("bootstrap max_m_per_cell must be >= 1")


@dataclass(frozen=True)
class FitOptions:
    """Newton solver settings. ``tol_grad=None`` means 1e-8 * n."""
    tol_grad: Optional[float] = None
    max_iter: int = 100
    ridge: float = 0.0
    verbose: bool = False

    def resolve_tol(self, n: int) -> float:
        if self.tol_grad is not None:
            return self.tol_grad
        return 1e-8 * max(n, 1)

    def validate(self) -> None:
        if self.tol_grad is not None and self.tol_grad <= 0:
            raise ConfigError(f"tol_grad must be > 0, got {self.tol_grad}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")


@dataclass(frozen=True)
class MetricsOptions:
    """Evaluation settings."""
    target_spec: float = 0.56
    mclor_nu: int = 20000
    mad_diagonal: bool = False
    histogram_bins: int = 20

    def validate(self) -> None:
        if not 0.0 < self.target_spec < 1.0:
            raise ConfigError(f"target_spec must be in (0, 1), got {self.target_spec}")
        if self.mclor_nu < 1:
            raise ConfigError(f"mclor_nu must be >= 1, got {self.mclor_nu}")
        if self.histogram_bins < 1:
            raise ConfigError("histogram_bins must be >= 1")


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles of an input CSV. ``feature_columns=None`` takes every other column."""
    group_column: str = "group"
    label_column: str = "label"
    feature_columns: Optional[Tuple[str, ...]] = None


REGIMES = ("blind", "equity", "blind_group_thresholds")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one harness run needs."""
    mode: RunMode = RunMode.SIMULATE
    scenarios: Tuple[str, ...] = tuple(p.name for p in SCENARIO_PRESETS)
    replications: int = 100
    sim: SimConfig = field(default_factory=SimConfig)
    bootstrap: BootstrapSpec = field(default_factory=BootstrapSpec)
    fit: FitOptions = field(default_factory=FitOptions)
    metrics: MetricsOptions = field(default_factory=MetricsOptions)
    schema: DatasetSchema = field(default_factory=DatasetSchema)
    split_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    regimes: Tuple[str, ...] = ("blind", "equity")
    output_dir: str = "results"
    master_seed: int = 0

    def validate(self) -> bool:
        """Raise ConfigError on the first invalid value."""
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        for name in self.scenarios:
            if name not in PRESETS_BY_NAME:
                raise ConfigError(f"unknown scenario preset: {name!r}")
        for regime in self.regimes:
            if regime not in REGIMES:
                raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")
        if any(f < 0 for f in self.split_fractions) or abs(sum(self.split_fractions) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must be nonnegative and sum to 1: {self.split_fractions}")
        if self.sim.n < 1 or self.sim.p < 1:
            raise ConfigError("simulation n and p must be >= 1")
        self.bootstrap.validate()
        self.fit.validate()
        self.metrics.validate()
        return True


# ---------------------------------------------------------------------------
# config file loading

def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _as_optional_int(value: Any) -> Optional[int]:
    if value is None or str(value).strip().lower() in ("", "none", "auto"):
        return None
    return int(value)


def _as_optional_float(value: Any) -> Optional[float]:
    if value is None or str(value).strip().lower() in ("", "none", "auto"):
        return None
    return float(value)


def _as_tuple(value: Any) -> Tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(str(v).strip() for v in value)
    return tuple(part.strip() for part in str(value).split(",") if part.strip())


def _as_fractions(value: Any) -> Tuple[float, float, float]:
    parts = tuple(float(v) for v in _as_tuple(value))
    if len(parts) != 3:
        raise ValueError(f"expected three fractions, got {value!r}")
    return parts


# section -> key -> (target dataclass attribute path, parser)
_KEYS = {
    "experiment": {
        "mode": ("mode", RunMode),
        "scenarios": ("scenarios", _as_tuple),
        "replications": ("replications", int),
        "output_dir": ("output_dir", str),
        "master_seed": ("master_seed", int),
        "split_fractions": ("split_fractions", _as_fractions),
        "regimes": ("regimes", _as_tuple),
    },
    "simulation": {
        "n": ("sim.n", int),
        "p": ("sim.p", int),
    },
    "bootstrap": {
        "m_per_cell": ("bootstrap.m_per_cell", _as_optional_int),
        "n_pos": ("bootstrap.n_pos", _as_optional_int),
        "n_neg": ("bootstrap.n_neg", _as_optional_int),
        "replacement_policy": ("bootstrap.replacement_policy", ReplacementPolicy),
        "max_m_per_cell": ("bootstrap.max_m_per_cell", int),
    },
    "fit": {
        "tol_grad": ("fit.tol_grad", _as_optional_float),
        "max_iter": ("fit.max_iter", int),
        "ridge": ("fit.ridge", float),
        "verbose": ("fit.verbose", _as_bool),
    },
    "metrics": {
        "target_spec": ("metrics.target_spec", float),
        "mclor_nu": ("metrics.mclor_nu", int),
        "mad_diagonal": ("metrics.mad_diagonal", _as_bool),
        "histogram_bins": ("metrics.histogram_bins", int),
    },
    "dataset": {
        "group_column": ("schema.group_column", str),
        "label_column": ("schema.label_column", str),
        "feature_columns": ("schema.feature_columns", _as_tuple),
    },
}


def _read_sections(path: Path) -> Dict[str, Dict[str, Any]]:
    if path.suffix.lower() in (".yaml", ".yml"):
        with open(path, encoding="utf-8") as handle:
            loaded = yaml.safe_load(handle) or {}
        if not isinstance(loaded, dict) or not all(isinstance(v, dict) for v in loaded.values()):
            raise ConfigError(f"{path}: expected a mapping of sections to key/value mappings")
        return {str(k): dict(v) for k, v in loaded.items()}
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    return {section: dict(parser.items(section)) for section in parser.sections()}


def sections_to_config(sections: Dict[str, Dict[str, Any]],
                       base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Apply parsed sections on top of ``base`` (defaults when omitted)."""
    updates: Dict[str, Dict[str, Any]] = {}
    top: Dict[str, Any] = {}
    for section, values in sections.items():
        known = _KEYS.get(section)
        if known is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            target, parse = known[key]
            try:
                value = parse(raw)
            except ValueError as e:
                raise ConfigError(f"[{section}] {key}: {e}") from e
            if "." in target:
                group, attr = target.split(".", 1)
                updates.setdefault(group, {})[attr] = value
            else:
                top[target] = value

    config = base or ExperimentConfig()
    for group, attrs in updates.items():
        top[group] = dataclasses.replace(getattr(config, group), **attrs)
    return dataclasses.replace(config, **top)


def load_experiment_config(path: str) -> ExperimentConfig:
    """Load and validate an experiment config file (INI, or YAML by suffix)."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = sections_to_config(_read_sections(config_path))
    config.validate()
    return config


def apply_overrides(config: ExperimentConfig,
                    master_seed: Optional[int] = None,
                    output_dir: Optional[str] = None,
                    scenarios: Optional[Tuple[str, ...]] = None,
                    replications: Optional[int] = None) -> ExperimentConfig:
    """Return a copy with CLI flag values taking precedence over file values."""
    changes: Dict[str, Any] = {}
    if master_seed is not None:
        changes["master_seed"] = master_seed
    if output_dir is not None:
        changes["output_dir"] = output_dir
    if scenarios:
        changes["scenarios"] = tuple(scenarios)
    if replications is not None:
        changes["replications"] = replications
    updated = dataclasses.replace(config, **changes)
    updated.validate()
    return updated


class RuntimeSettings:
    """Process-level settings taken from the environment."""

    def __init__(self):
        self.log_level = os.getenv("EQUIBOOT_LOG_LEVEL", "INFO")
        self.log_file = os.getenv("EQUIBOOT_LOG_FILE")

    @property
    def threads(self) -> int:
        """Worker pool cap; EQUIBOOT_THREADS, else the CPU count."""
        raw = os.getenv("EQUIBOOT_THREADS", "").strip()
        if not raw:
            return os.cpu_count() or 1
        try:
            return max(1, int(raw))
        except ValueError as e:
            raise ConfigError(f"EQUIBOOT_THREADS must be an integer, got {raw!r}") from e


# Global settings instance
settings = RuntimeSettings()
