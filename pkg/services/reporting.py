"""Report types for both harnesses and their CSV/text rendering."""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from services.exceptions import EquibootError
from services.fairness import GroupMetrics, equal_odds_gap
from services.logistic import LogisticModel, to_text
from services.odds import OddsRatioMatrix

logger = logging.getLogger(__name__)

# Simulation table columns: original data/model, equity-bootstrapped data/model, intercept-adjusted.
TABLE4_COLUMNS = ("orig_eor", "orig_lor", "orig_mclor",
                  "equity_eor", "equity_lor", "equity_mclor", "intadj")
FLOAT_FORMAT = "%.10g"


@dataclass
class ReplicationResult:
    """mad from one of every statistic for one replication, under both conventions."""
    scenario: str
    replication: int
    mad_off_diagonal: Dict[str, float]
    mad_all_entries: Dict[str, float]
    nonconverged_fits: int = 0


@dataclass
class ScenarioSummary:
    """Replication means for one simulation scenario."""
    name: str
    label: str
    num_groups: int
    replications: int
    mad_off_diagonal: Dict[str, float]
    mad_all_entries: Dict[str, float]
    nonconverged_fits: int = 0

    def means(self, diagonal_included: bool) -> Dict[str, float]:
        return self.mad_all_entries if diagonal_included else self.mad_off_diagonal


@dataclass
class Table4Report:
    """Output of run_simulation."""
    scenarios: List[ScenarioSummary]
    mad_diagonal: bool
    master_seed: int
    n: int
    p: int
    m_per_cell: int
    notes: List[str] = field(default_factory=list)

    def frame(self, diagonal_included: Optional[bool] = None) -> pd.DataFrame:
        diagonal = self.mad_diagonal if diagonal_included is None else diagonal_included
        rows = []
        for summary in self.scenarios:
            row = {"scenario": summary.name, "num_groups": summary.num_groups,
                   "z_family": summary.label}
            row.update({column: summary.means(diagonal)[column] for column in TABLE4_COLUMNS})
            rows.append(row)
        return pd.DataFrame(rows, columns=["scenario", "num_groups", "z_family", *TABLE4_COLUMNS])


@dataclass
class ModelEvaluation:
    """Held-out metrics of one fitted model within one training regime."""
    model_name: str
    threshold: Union[float, np.ndarray]
    metrics: GroupMetrics

    @property
    def gap(self) -> float:
        return equal_odds_gap(self.metrics)


@dataclass
class RegimeResult:
    """Everything produced for one training regime of the dataset pipeline."""
    regime: str
    training_rows: int
    training_or: OddsRatioMatrix
    logistic: LogisticModel
    evaluations: List[ModelEvaluation]
    histograms: pd.DataFrame


@dataclass
class PipelineReport:
    """Output of run_dataset_pipeline."""
    regimes: List[RegimeResult]
    group_names: Tuple[str, ...]
    m_per_cell: int
    n_pos: int
    n_neg: int
    target_spec: float
    notes: List[str] = field(default_factory=list)

    def regime(self, name: str) -> RegimeResult:
        for result in self.regimes:
            if result.regime == name:
                return result
        raise KeyError(name)


def score_histograms(scores: np.ndarray, labels: np.ndarray, groups: np.ndarray,
                     group_names: Sequence[str], model_name: str, bins: int = 20) -> pd.DataFrame:
    """Counts of predicted probabilities on [0, 1], one series per (group, label)."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    for a, group_name in enumerate(group_names):
        for y in (0, 1):
            counts, _ = np.histogram(scores[(groups == a) & (labels == y)], bins=edges)
            for b in range(bins):
                rows.append({"model": model_name, "group": group_name, "label": y, "bin": b,
                             "bin_left": edges[b], "bin_right": edges[b + 1],
                             "count": int(counts[b])})
    return pd.DataFrame(rows, columns=["model", "group", "label", "bin",
                                       "bin_left", "bin_right", "count"])


def metrics_frame(result: RegimeResult, group_names: Sequence[str]) -> pd.DataFrame:
    rows = []
    for evaluation in result.evaluations:
        metrics = evaluation.metrics
        thresholds = np.broadcast_to(np.asarray(evaluation.threshold, dtype=float),
                                     (len(group_names),))
        for a, name in enumerate(group_names):
            rows.append({"model": evaluation.model_name, "group": name,
                         "sens": metrics.sens[a], "spec": metrics.spec[a],
                         "n_pos": int(metrics.counts[a, 1]), "n_neg": int(metrics.counts[a, 0]),
                         "threshold": thresholds[a]})
    return pd.DataFrame(rows, columns=["model", "group", "sens", "spec",
                                       "n_pos", "n_neg", "threshold"])


def fairness_table(result: RegimeResult, group_names: Sequence[str]) -> pd.DataFrame:
    """Specificity and sensitivity per group plus ranges, one row per model."""
    rows = {}
    for evaluation in result.evaluations:
        metrics = evaluation.metrics
        row = {f"spec {name}": metrics.spec[a] for a, name in enumerate(group_names)}
        row["spec Range"] = metrics.spec_range
        row.update({f"sens {name}": metrics.sens[a] for a, name in enumerate(group_names)})
        row["sens Range"] = metrics.sens_range
        rows[evaluation.model_name] = row
    return pd.DataFrame.from_dict(rows, orient="index")


def _prepare_dir(output_dir: str) -> None:
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as e:
        raise EquibootError(f"cannot create output directory {output_dir}: {e}") from e
    if not os.access(output_dir, os.W_OK):
        raise EquibootError(f"output directory is not writable: {output_dir}")


def render_table4(report: Table4Report, output_dir: str) -> str:
    _prepare_dir(output_dir)
    primary = report.frame()
    primary.to_csv(os.path.join(output_dir, "table4.csv"), index=False, float_format=FLOAT_FORMAT)
    other = "off_diagonal" if report.mad_diagonal else "all_entries"
    report.frame(not report.mad_diagonal).to_csv(
        os.path.join(output_dir, f"table4_{other}.csv"), index=False, float_format=FLOAT_FORMAT)

    convention = "all entries" if report.mad_diagonal else "off-diagonal entries"
    lines = [
        "Mean absolute deviation of odds ratios from one "
        f"({convention}; n={report.n}, p={report.p}, M={report.m_per_cell}, "
        f"seed={report.master_seed})",
        primary.drop(columns=["scenario"]).to_string(index=False, float_format=lambda v: f"{v:.4f}"),
    ]
    nonconverged = sum(s.nonconverged_fits for s in report.scenarios)
    if nonconverged:
        lines.append(f"non-converged logistic fits: {nonconverged}")
    lines += [f"note: {note}" for note in report.notes]
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(output_dir, "summary.txt"), "w", encoding="utf-8") as handle:
        handle.write(summary)
    logger.info("Wrote simulation table to %s", output_dir)
    return summary


def render_pipeline(report: PipelineReport, output_dir: str) -> str:
    _prepare_dir(output_dir)
    lines = [f"Held-out group metrics (target training specificity {report.target_spec}, "
             f"M={report.m_per_cell}, blind n_pos={report.n_pos}, n_neg={report.n_neg})"]
    for result in report.regimes:
        metrics_frame(result, report.group_names).to_csv(
            os.path.join(output_dir, f"metrics_{result.regime}.csv"),
            index=False, float_format=FLOAT_FORMAT)
        result.histograms.to_csv(
            os.path.join(output_dir, f"histograms_{result.regime}.csv"),
            index=False, float_format=FLOAT_FORMAT)
        result.training_or.to_csv(os.path.join(output_dir, f"or_{result.regime}.csv"))
        with open(os.path.join(output_dir, f"models_{result.regime}.txt"), "w",
                  encoding="utf-8") as handle:
            handle.write(to_text(result.logistic))

        lines.append("")
        lines.append(f"[{result.regime}] training rows={result.training_rows}, "
                     f"training EOR mad={result.training_or.mad_from_one:.4f}")
        lines.append(fairness_table(result, report.group_names)
                     .to_string(float_format=lambda v: f"{v:.2f}"))
        for evaluation in result.evaluations:
            lines.append(f"  {evaluation.model_name}: equal-odds gap {evaluation.gap:.4f}")
    lines += [f"note: {note}" for note in report.notes]
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(output_dir, "summary.txt"), "w", encoding="utf-8") as handle:
        handle.write(summary)
    logger.info("Wrote pipeline report to %s", output_dir)
    return summary


def report_render(report: Union[Table4Report, PipelineReport], output_dir: str) -> str:
    """Write the report's files into ``output_dir`` and return the text summary."""
    if isinstance(report, Table4Report):
        return render_table4(report, output_dir)
    if isinstance(report, PipelineReport):
        return render_pipeline(report, output_dir)
    raise TypeError(f"cannot render {type(report).__name__}")
