import dataclasses
import unittest
from unittest.mock import patch

import numpy as np

from config.settings import (
    PRESETS_BY_NAME,
    BootstrapMode,
    BootstrapSpec,
    ExperimentConfig,
    FitOptions,
    MetricsOptions,
    RunMode,
)
from pipelines.workflow import (
    PipelineStage,
    ReplicationStage,
    create_dataset_workflow,
    create_replication_workflow,
)
from services.reporting import TABLE4_COLUMNS
from services.simgen import generate


def replication_state(scenario="discrete-3", seed=(0, 0, 0)):
    return {
        "scenario": scenario,
        "replication": seed[2],
        "seed": seed,
        "sim_config": PRESETS_BY_NAME[scenario].sim_config(2000, 3, seed[0]),
        "bootstrap": BootstrapSpec(mode=BootstrapMode.EQUITY, m_per_cell=100),
        "fit": FitOptions(),
        "metrics": MetricsOptions(mclor_nu=500),
        "current_stage": ReplicationStage.GENERATE,
        "error_message": None,
        "rng": np.random.default_rng(list(seed)),
        "simulated": None,
        "original_model": None,
        "equity_data": None,
        "equity_model": None,
        "matrices": {},
        "nonconverged_fits": 0,
        "result": None,
    }


def pipeline_state(config, data):
    return {
        "config": config,
        "data": data,
        "current_stage": PipelineStage.SPLIT,
        "error_message": None,
        "split": None,
        "bootstrap": None,
        "training_sets": {},
        "regime_results": [],
        "notes": [],
    }


class TestReplicationWorkflow(unittest.TestCase):
    def setUp(self):
        self.workflow = create_replication_workflow()

    def test_runs_to_completion(self):
        """Test that the replication graph completes."""
        final = self.workflow.invoke(replication_state())
        self.assertEqual(final["current_stage"], ReplicationStage.COMPLETE)
        self.assertIsNone(final["error_message"])
        self.assertEqual(set(final["matrices"]), set(TABLE4_COLUMNS))
        self.assertEqual(final["equity_data"].n, 2 * 3 * 100)
        result = final["result"]
        self.assertEqual(set(result.mad_off_diagonal), set(TABLE4_COLUMNS))
        # Equity cells are all of size M.
        self.assertEqual(result.mad_off_diagonal["equity_eor"], 0.0)
        for column in TABLE4_COLUMNS:
            self.assertGreaterEqual(result.mad_off_diagonal[column], result.mad_all_entries[column])

    def test_same_seed_same_result(self):
        """Test that one seed gives one result."""
        first = self.workflow.invoke(replication_state(seed=(3, 1, 2)))["result"]
        second = self.workflow.invoke(replication_state(seed=(3, 1, 2)))["result"]
        self.assertEqual(first.mad_off_diagonal, second.mad_off_diagonal)

    @patch("pipelines.workflow_nodes.fit_logistic", side_effect=RuntimeError("solver exploded"))
    def test_node_failure_routes_to_end(self, _mock_fit):
        """Test that a node failure ends the graph in ERROR."""
        with self.assertLogs("pipelines.workflow_nodes", level="ERROR"):
            final = self.workflow.invoke(replication_state())
        self.assertEqual(final["current_stage"], ReplicationStage.ERROR)
        self.assertIn("solver exploded", final["error_message"])
        self.assertIsNotNone(final["simulated"])
        self.assertIsNone(final["equity_model"])
        self.assertIsNone(final["result"])


class TestDatasetWorkflow(unittest.TestCase):
    def setUp(self):
        self.workflow = create_dataset_workflow()
        sim = generate(PRESETS_BY_NAME["discrete-3"].sim_config(4000, 4),
                       np.random.default_rng(5))
        self.data = sim.data
        self.config = ExperimentConfig(mode=RunMode.DATASET, master_seed=11,
                                       regimes=("blind", "equity", "blind_group_thresholds"))

    def test_runs_all_regimes(self):
        """Test that the dataset graph runs every regime."""
        final = self.workflow.invoke(pipeline_state(self.config, self.data))
        self.assertEqual(final["current_stage"], PipelineStage.COMPLETE, final["error_message"])
        self.assertEqual([r.regime for r in final["regime_results"]],
                         ["blind", "equity", "blind_group_thresholds"])
        self.assertEqual(set(final["training_sets"]), {"blind", "equity"})

        spec = final["bootstrap"]
        smallest = min(len(rows) for rows in final["split"].train.values())
        self.assertEqual(spec.m_per_cell, smallest)
        self.assertEqual(spec.n_pos, 3 * smallest)

        equity = final["regime_results"][1]
        self.assertEqual(equity.training_or.mad_from_one, 0.0)
        self.assertEqual(equity.training_rows, 2 * 3 * smallest)
        self.assertEqual([e.model_name for e in equity.evaluations], ["logistic", "naive_bayes"])

        per_group = final["regime_results"][2]
        self.assertEqual(len(per_group.evaluations), 1)
        self.assertEqual(np.shape(per_group.evaluations[0].threshold), (3,))
        self.assertEqual(per_group.logistic.threshold, 0.5)
        np.testing.assert_array_equal(per_group.logistic.group_intercept_offsets, np.zeros(3))
        np.testing.assert_array_equal(per_group.logistic.group_thresholds,
                                      per_group.evaluations[0].threshold)

    def test_blind_regimes_share_one_fit(self):
        """Test that both blind regimes share one fit."""
        final = self.workflow.invoke(pipeline_state(self.config, self.data))
        blind, _, per_group = final["regime_results"]
        np.testing.assert_array_equal(blind.logistic.theta, per_group.logistic.theta)

    def test_regime_selection_does_not_shift_draws(self):
        """Test that the regime list does not shift bootstrap draws."""
        only_equity = dataclasses.replace(self.config, regimes=("equity",))
        both = self.workflow.invoke(pipeline_state(self.config, self.data))
        single = self.workflow.invoke(pipeline_state(only_equity, self.data))
        np.testing.assert_array_equal(both["training_sets"]["equity"].z,
                                      single["training_sets"]["equity"].z)

    def test_empty_test_split_routes_to_end(self):
        """Test that an empty test split ends the graph in ERROR."""
        config = dataclasses.replace(self.config, split_fractions=(1.0, 0.0, 0.0))
        with self.assertLogs("pipelines.workflow_nodes", level="ERROR"):
            final = self.workflow.invoke(pipeline_state(config, self.data))
        self.assertEqual(final["current_stage"], PipelineStage.ERROR)
        self.assertIn("test split is empty", final["error_message"])
        self.assertEqual(final["regime_results"], [])


if __name__ == "__main__":
    unittest.main()
