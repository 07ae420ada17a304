"""V1 Response schemas for MCP tools."""

from pydantic import BaseModel


class TraceEventV1Response(BaseModel):
    """V1: One timestamped trace event."""

    time: float
    event: str


class RunScenarioV1Response(BaseModel):
    """V1: Outcome of one scenario run."""

    scenario: str
    seed: int
    caught: bool
    catch_error: float
    time_to_catch: float | None = None
    reroutes: int
    blocked: int
    min_clearance: float
    penetrations: int
    ticks: int
    events: list[TraceEventV1Response]
    trace_path: str | None = None


class BatchRunV1Response(BaseModel):
    """V1: Aggregate of a seeded batch."""

    runs: int
    catch_rate: float
    catch_rate_lo: float
    catch_rate_hi: float
    trigger_rate: float
    mean_reroutes: float
    min_clearance: float
    penetrations: int
    caught_seeds: list[int]


class PlanRouteV1Response(BaseModel):
    """V1: Planned route or the reason there is none."""

    found: bool
    nodes: list[int] = []
    weight: float | None = None
    message: str | None = None
