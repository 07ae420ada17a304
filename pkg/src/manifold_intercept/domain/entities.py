"""Run records produced by the scenario runner."""

import math

from pydantic import BaseModel, Field, model_validator

from manifold_intercept.domain.value_objects import EventType, Vec3

# Each event may only appear after at least one of its predecessors.
CAUSAL_PREREQUISITES: dict[EventType, tuple[EventType, ...]] = {
    EventType.PREDICT: (EventType.TRIGGER,),
    EventType.REPREDICT: (EventType.PREDICT,),
    EventType.CATCH: (EventType.TRIGGER,),
    EventType.UNREACHABLE: (EventType.TRIGGER,),
}


class TraceRow(BaseModel):
    """
    One control tick of a scenario run.

    Observation and filter columns are NaN before the tracker starts.
    """

    time: float
    ball: Vec3
    observation: Vec3 = (math.nan, math.nan, math.nan)
    estimate: Vec3 = (math.nan, math.nan, math.nan)
    covariance_diag: Vec3 = (math.nan, math.nan, math.nan)
    stage: int = 0
    route_revision: int = 0
    joints: list[float]
    ee: Vec3
    min_clearance: float
    events: list[EventType] = Field(default_factory=list)


class ScenarioTrace(BaseModel):
    """Ordered tick rows of one run."""

    scenario: str = "scenario"
    seed: int = 0
    rows: list[TraceRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_causality(self) -> "ScenarioTrace":
        """Events must appear in causally valid order."""
        seen: set[EventType] = set()
        for event in self.events():
            needs = CAUSAL_PREREQUISITES.get(event[1], ())
            if needs and not seen.intersection(needs):
                raise ValueError(f"{event[1].value} at t={event[0]:.4f} precedes {needs[0].value}")
            seen.add(event[1])
        return self

    def events(self) -> list[tuple[float, EventType]]:
        """Flat (time, event) list in emission order."""
        return [(row.time, e) for row in self.rows for e in row.events]

    def count(self, event: EventType) -> int:
        return sum(1 for _, e in self.events() if e == event)


class RunMetrics(BaseModel):
    """Summary of one run."""

    scenario: str = "scenario"
    seed: int = 0
    caught: bool = False
    catch_error: float = math.inf
    time_to_catch: float | None = None
    catch_tolerance: float = Field(default=0.10, gt=0.0)
    triggered: bool = False
    reroutes: int = 0
    blocked: int = 0
    min_clearance: float = math.inf
    penetrations: int = 0
    route_lengths: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_catch(self) -> "RunMetrics":
        """A catch must lie within the tolerance."""
        if self.caught and self.catch_error > self.catch_tolerance:
            raise ValueError(
                f"catch error {self.catch_error:.4f} m exceeds tolerance {self.catch_tolerance} m"
            )
        return self
