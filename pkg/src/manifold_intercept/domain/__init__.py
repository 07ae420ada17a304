"""Domain layer for Manifold Intercept."""

from manifold_intercept.domain.entities import RunMetrics, ScenarioTrace, TraceRow
from manifold_intercept.domain.repository import IArtifactRepository
from manifold_intercept.domain.services import (
    BatchReport,
    PipelineArtifacts,
    ScenarioRunner,
    batch_run,
    run_scenario,
)
from manifold_intercept.domain.value_objects import (
    ArmModel,
    BallState,
    CameraModel,
    EventType,
    Scenario,
    ScenarioConfig,
)

__all__ = [
    "ArmModel",
    "BallState",
    "CameraModel",
    "EventType",
    "Scenario",
    "ScenarioConfig",
    "TraceRow",
    "ScenarioTrace",
    "RunMetrics",
    "IArtifactRepository",
    "PipelineArtifacts",
    "ScenarioRunner",
    "BatchReport",
    "run_scenario",
    "batch_run",
]
