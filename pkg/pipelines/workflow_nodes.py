"""Node implementations for the replication and dataset-pipeline state machines."""
import dataclasses
import logging
from typing import Dict, List

import numpy as np
import pandas as pd

from config.settings import REGIMES, BootstrapMode, ExperimentConfig
from pipelines.workflow import (
    DatasetPipelineState,
    PipelineStage,
    ReplicationStage,
    ReplicationState,
)
from services import odds, resample, simgen
from services.dataset import Dataset, partition_by_group_label, sequential_split
from services.exceptions import DatasetError
from services.fairness import (
    calibrate_threshold,
    group_sens_spec,
    group_thresholds,
    labels_at_thresholds,
)
from services.logistic import LogisticModel, fit_logistic
from services.naive_bayes import fit_naive_bayes
from services.reporting import (
    TABLE4_COLUMNS,
    ModelEvaluation,
    RegimeResult,
    ReplicationResult,
    score_histograms,
)

logger = logging.getLogger(__name__)

# The simulation bootstraps the whole generated dataset.
SIMULATION_SPLIT = (1.0, 0.0, 0.0)


class SimulationNodes:
    """Nodes of one replication: every node reads the shared generator in a fixed order."""

    def generate(self, state: ReplicationState) -> ReplicationState:
        try:
            logger.debug("Generating %s replication %d (seed %s)",
                         state["scenario"], state["replication"], state["seed"])
            state["simulated"] = simgen.generate(state["sim_config"], state["rng"])
            state["current_stage"] = ReplicationStage.ORIGINAL_DIAGNOSTICS
        except Exception as e:
            logger.error("Data generation failed: %s", e)
            state["error_message"] = f"Data generation failed: {e}"
            state["current_stage"] = ReplicationStage.ERROR
        return state

    def original_diagnostics(self, state: ReplicationState) -> ReplicationState:
        """EOR, LOR and MCLOR for the generated data and the LR fitted to all of it."""
        try:
            simulated = state["simulated"]
            metrics = state["metrics"]
            flag = metrics.mad_diagonal
            model = fit_logistic(simulated.data, state["fit"])
            sampler = odds.generator_z_sampler(simulated.z_dist)

            matrices = state["matrices"]
            matrices["orig_eor"] = odds.dataset_or(simulated.data, flag)
            matrices["orig_lor"] = odds.conditional_lor(model, flag)
            matrices["orig_mclor"] = odds.mc_lor(model, sampler, metrics.mclor_nu, state["rng"], flag)
            state["original_model"] = model
            state["nonconverged_fits"] += int(not model.converged)
            state["current_stage"] = ReplicationStage.EQUITY_BOOTSTRAP
        except Exception as e:
            logger.error("Original-model diagnostics failed: %s", e)
            state["error_message"] = f"Original-model diagnostics failed: {e}"
            state["current_stage"] = ReplicationStage.ERROR
        return state

    def equity_bootstrap(self, state: ReplicationState) -> ReplicationState:
        """Equity resample, refit LR', and the primed diagnostics."""
        try:
            simulated = state["simulated"]
            metrics = state["metrics"]
            flag = metrics.mad_diagonal
            split = sequential_split(partition_by_group_label(simulated.data), SIMULATION_SPLIT)
            equity_data = resample.equity_bootstrap(split, simulated.data, state["bootstrap"],
                                                    state["rng"])
            model = fit_logistic(equity_data, state["fit"])
            sampler = odds.generator_z_sampler(simulated.z_dist)

            matrices = state["matrices"]
            matrices["equity_eor"] = odds.dataset_or(equity_data, flag)
            matrices["equity_lor"] = odds.conditional_lor(model, flag)
            matrices["equity_mclor"] = odds.mc_lor(model, sampler, metrics.mclor_nu,
                                                   state["rng"], flag)
            state["equity_data"] = equity_data
            state["equity_model"] = model
            state["nonconverged_fits"] += int(not model.converged)
            state["current_stage"] = ReplicationStage.INTERCEPT_ADJUST
        except Exception as e:
            logger.error("Equity bootstrap stage failed: %s", e)
            state["error_message"] = f"Equity bootstrap stage failed: {e}"
            state["current_stage"] = ReplicationStage.ERROR
        return state

    def intercept_adjust(self, state: ReplicationState) -> ReplicationState:
        """Adjust the original LR against the full generated data and summarize the replication."""
        try:
            simulated = state["simulated"]
            metrics = state["metrics"]
            adjusted = odds.intercept_adjust(state["original_model"], simulated.data)
            state["matrices"]["intadj"] = odds.mc_lor(
                adjusted, odds.generator_z_sampler(simulated.z_dist), metrics.mclor_nu,
                state["rng"], metrics.mad_diagonal, estimator=odds.Estimator.INTADJ,
            )
            matrices = state["matrices"]
            state["result"] = ReplicationResult(
                scenario=state["scenario"],
                replication=state["replication"],
                mad_off_diagonal={k: matrices[k].mad(False) for k in TABLE4_COLUMNS},
                mad_all_entries={k: matrices[k].mad(True) for k in TABLE4_COLUMNS},
                nonconverged_fits=state["nonconverged_fits"],
            )
            state["current_stage"] = ReplicationStage.COMPLETE
        except Exception as e:
            logger.error("Intercept adjustment failed: %s", e)
            state["error_message"] = f"Intercept adjustment failed: {e}"
            state["current_stage"] = ReplicationStage.ERROR
        return state


class DatasetPipelineNodes:
    """Nodes of the blind-versus-equity pipeline on one dataset."""

    def split(self, state: DatasetPipelineState) -> DatasetPipelineState:
        """Sequential split, then resolve M, n_pos and n_neg from the training cells."""
        try:
            data, config = state["data"], state["config"]
            if data.n == 0:
                raise DatasetError("dataset has no rows")
            split = sequential_split(partition_by_group_label(data), config.split_fractions)
            sizes = [len(rows) for rows in split.train.values() if rows]
            if not sizes:
                raise DatasetError("training split is empty")

            spec = config.bootstrap
            m = spec.m_per_cell or min(min(sizes), spec.max_m_per_cell)
            n_pos = spec.n_pos or data.num_groups * m
            n_neg = spec.n_neg or data.num_groups * m
            state["bootstrap"] = dataclasses.replace(spec, m_per_cell=m, n_pos=n_pos, n_neg=n_neg)
            state["split"] = split
            state["notes"].append(f"M={m} per cell; blind n_pos={n_pos}, n_neg={n_neg}")
            logger.info("Split %d rows; training cells %s; M=%d",
                        data.n, {k: len(v) for k, v in split.train.items()}, m)
            state["current_stage"] = PipelineStage.BOOTSTRAP
        except Exception as e:
            logger.error("Split failed: %s", e)
            state["error_message"] = f"Split failed: {e}"
            state["current_stage"] = PipelineStage.ERROR
        return state

    def bootstrap(self, state: DatasetPipelineState) -> DatasetPipelineState:
        """Build B and/or E. Each gets its own stream so regime selection does not shift draws."""
        try:
            config = state["config"]
            needed = {_base_mode(regime) for regime in config.regimes}
            for mode in (BootstrapMode.BLIND, BootstrapMode.EQUITY):
                if mode not in needed:
                    continue
                rng = np.random.default_rng([config.master_seed, REGIMES.index(mode.value)])
                spec = dataclasses.replace(state["bootstrap"], mode=mode)
                train = resample.bootstrap(state["split"], state["data"], spec, rng)
                state["training_sets"][mode.value] = train
                logger.info("Built %s training set with %d rows", mode.value, train.n)
            state["current_stage"] = PipelineStage.FIT_EVALUATE
        except Exception as e:
            logger.error("Bootstrap failed: %s", e)
            state["error_message"] = f"Bootstrap failed: {e}"
            state["current_stage"] = PipelineStage.ERROR
        return state

    def fit_evaluate(self, state: DatasetPipelineState) -> DatasetPipelineState:
        """Fit, calibrate on the bootstrap set, and score the frozen test cells per regime."""
        try:
            data, config = state["data"], state["config"]
            test = data.take(state["split"].pooled("test"))
            if test.n == 0:
                raise DatasetError("test split is empty")
            fitted: Dict[str, LogisticModel] = {}
            for regime in config.regimes:
                result = self._evaluate_regime(regime, state, test, fitted)
                state["regime_results"].append(result)
            state["current_stage"] = PipelineStage.COMPLETE
        except Exception as e:
            logger.error("Fit/evaluate failed: %s", e)
            state["error_message"] = f"Fit/evaluate failed: {e}"
            state["current_stage"] = PipelineStage.ERROR
        return state

    def _evaluate_regime(self, regime: str, state: DatasetPipelineState, test: Dataset,
                         fitted: Dict[str, LogisticModel]) -> RegimeResult:
        config: ExperimentConfig = state["config"]
        base = _base_mode(regime).value
        train = state["training_sets"][base]
        target = config.metrics.target_spec
        if base not in fitted:
            fitted[base] = fit_logistic(train, config.fit)
        lr = fitted[base]

        evaluations: List[ModelEvaluation] = []
        histograms: List[pd.DataFrame] = []
        lr_scores = lr.predict_proba(test)

        if regime == "blind_group_thresholds":
            taus = group_thresholds(lr, train, target)
            model = dataclasses.replace(lr, group_thresholds=taus)
            evaluations.append(self._evaluation("logistic", lr_scores, taus, test))
        else:
            tau = calibrate_threshold(lr, train, target)
            model = lr.with_threshold(tau)
            evaluations.append(self._evaluation("logistic", lr_scores, tau, test))
            try:
                nb = fit_naive_bayes(train)
            except DatasetError as e:
                logger.warning("Skipping naive Bayes for %s: %s", regime, e)
                if not any("naive Bayes" in note for note in state["notes"]):
                    state["notes"].append(f"naive Bayes skipped: {e}")
            else:
                nb_scores = nb.predict_proba(test)
                nb_tau = calibrate_threshold(nb, train, target)
                evaluations.append(self._evaluation("naive_bayes", nb_scores, nb_tau, test))
                histograms.append(score_histograms(nb_scores, test.label, test.group,
                                                   test.group_names, "naive_bayes",
                                                   config.metrics.histogram_bins))
        histograms.insert(0, score_histograms(lr_scores, test.label, test.group, test.group_names,
                                              "logistic", config.metrics.histogram_bins))

        training_or = odds.dataset_or(train, config.metrics.mad_diagonal)
        logger.info("%s: training EOR mad=%.4f; %s", regime, training_or.mad_from_one,
                    ", ".join(f"{e.model_name} gap={e.gap:.4f}" for e in evaluations))
        return RegimeResult(
            regime=regime,
            training_rows=train.n,
            training_or=training_or,
            logistic=model,
            evaluations=evaluations,
            histograms=pd.concat(histograms, ignore_index=True),
        )

    @staticmethod
    def _evaluation(name: str, scores: np.ndarray, threshold, test: Dataset) -> ModelEvaluation:
        pred = labels_at_thresholds(scores, test.group, threshold)
        metrics = group_sens_spec(pred, test.label, test.group, test.num_groups, test.group_names)
        return ModelEvaluation(model_name=name, threshold=threshold, metrics=metrics)


def _base_mode(regime: str) -> BootstrapMode:
    return BootstrapMode.EQUITY if regime == "equity" else BootstrapMode.BLIND
