"""LangGraph state definitions and graphs for one simulation replication and the dataset pipeline."""
from enum import Enum
from typing import Dict, List, Optional, Tuple, TypedDict

import numpy as np
from langgraph.graph import END, StateGraph

from config.settings import BootstrapSpec, ExperimentConfig, FitOptions, MetricsOptions, SimConfig
from services.dataset import Dataset, TrainTestValSplit
from services.logistic import LogisticModel
from services.odds import OddsRatioMatrix
from services.reporting import RegimeResult, ReplicationResult
from services.simgen import SimulatedData


class ReplicationStage(Enum):
    """Stages of one simulation replication."""
    GENERATE = "generate"
    ORIGINAL_DIAGNOSTICS = "original_diagnostics"
    EQUITY_BOOTSTRAP = "equity_bootstrap"
    INTERCEPT_ADJUST = "intercept_adjust"
    COMPLETE = "complete"
    ERROR = "error"


class PipelineStage(Enum):
    """Stages of the dataset pipeline."""
    SPLIT = "split"
    BOOTSTRAP = "bootstrap"
    FIT_EVALUATE = "fit_evaluate"
    COMPLETE = "complete"
    ERROR = "error"


class ReplicationState(TypedDict):
    """State carried through one replication of the odds-ratio study."""
    # Identity and reproduction
    scenario: str
    replication: int
    seed: Tuple[int, int, int]
    sim_config: SimConfig
    bootstrap: BootstrapSpec
    fit: FitOptions
    metrics: MetricsOptions

    # Workflow control
    current_stage: ReplicationStage
    error_message: Optional[str]
    rng: np.random.Generator

    # Intermediate products
    simulated: Optional[SimulatedData]
    original_model: Optional[LogisticModel]
    equity_data: Optional[Dataset]
    equity_model: Optional[LogisticModel]
    matrices: Dict[str, OddsRatioMatrix]
    nonconverged_fits: int

    # Final output
    result: Optional[ReplicationResult]


class DatasetPipelineState(TypedDict):
    """State carried through the blind-versus-equity dataset pipeline."""
    config: ExperimentConfig
    data: Dataset

    current_stage: PipelineStage
    error_message: Optional[str]

    split: Optional[TrainTestValSplit]
    bootstrap: Optional[BootstrapSpec]
    training_sets: Dict[str, Dataset]
    regime_results: List[RegimeResult]
    notes: List[str]


def create_replication_workflow():
    """Compile generate -> original diagnostics -> equity bootstrap -> intercept adjustment."""

    def generate(state: ReplicationState) -> ReplicationState:
        from pipelines.workflow_nodes import SimulationNodes
        return SimulationNodes().generate(state)

    def original_diagnostics(state: ReplicationState) -> ReplicationState:
        from pipelines.workflow_nodes import SimulationNodes
        return SimulationNodes().original_diagnostics(state)

    def equity_bootstrap(state: ReplicationState) -> ReplicationState:
        from pipelines.workflow_nodes import SimulationNodes
        return SimulationNodes().equity_bootstrap(state)

    def intercept_adjust(state: ReplicationState) -> ReplicationState:
        from pipelines.workflow_nodes import SimulationNodes
        return SimulationNodes().intercept_adjust(state)

    def route_replication(state: ReplicationState) -> str:
        stage = state.get("current_stage", ReplicationStage.GENERATE)
        if stage == ReplicationStage.ORIGINAL_DIAGNOSTICS:
            return "original_diagnostics"
        if stage == ReplicationStage.EQUITY_BOOTSTRAP:
            return "equity_bootstrap"
        if stage == ReplicationStage.INTERCEPT_ADJUST:
            return "intercept_adjust"
        return END

    workflow = StateGraph(ReplicationState)
    workflow.add_node("generate", generate)
    workflow.add_node("original_diagnostics", original_diagnostics)
    workflow.add_node("equity_bootstrap", equity_bootstrap)
    workflow.add_node("intercept_adjust", intercept_adjust)

    workflow.set_entry_point("generate")
    workflow.add_conditional_edges(
        "generate", route_replication,
        {"original_diagnostics": "original_diagnostics", END: END},
    )
    workflow.add_conditional_edges(
        "original_diagnostics", route_replication,
        {"equity_bootstrap": "equity_bootstrap", END: END},
    )
    workflow.add_conditional_edges(
        "equity_bootstrap", route_replication,
        {"intercept_adjust": "intercept_adjust", END: END},
    )
    workflow.add_edge("intercept_adjust", END)
    return workflow.compile()


def create_dataset_workflow():
    """Compile split -> bootstrap -> fit and evaluate."""

    def split(state: DatasetPipelineState) -> DatasetPipelineState:
        from pipelines.workflow_nodes import DatasetPipelineNodes
        return DatasetPipelineNodes().split(state)

    def bootstrap(state: DatasetPipelineState) -> DatasetPipelineState:
        from pipelines.workflow_nodes import DatasetPipelineNodes
        return DatasetPipelineNodes().bootstrap(state)

    def fit_evaluate(state: DatasetPipelineState) -> DatasetPipelineState:
        from pipelines.workflow_nodes import DatasetPipelineNodes
        return DatasetPipelineNodes().fit_evaluate(state)

    def route_pipeline(state: DatasetPipelineState) -> str:
        stage = state.get("current_stage", PipelineStage.SPLIT)
        if stage == PipelineStage.BOOTSTRAP:
            return "bootstrap"
        if stage == PipelineStage.FIT_EVALUATE:
            return "fit_evaluate"
        return END

    workflow = StateGraph(DatasetPipelineState)
    workflow.add_node("split", split)
    workflow.add_node("bootstrap", bootstrap)
    workflow.add_node("fit_evaluate", fit_evaluate)

    workflow.set_entry_point("split")
    workflow.add_conditional_edges("split", route_pipeline, {"bootstrap": "bootstrap", END: END})
    workflow.add_conditional_edges(
        "bootstrap", route_pipeline, {"fit_evaluate": "fit_evaluate", END: END}
    )
    workflow.add_edge("fit_evaluate", END)
    return workflow.compile()
