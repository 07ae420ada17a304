"""V1 Request schemas for MCP tools."""

from typing import Annotated, Literal

from pydantic import BaseModel, Field, field_validator


class RunScenarioV1Request(BaseModel):
    """V1: Run one closed-loop interception scenario."""

    artifact_dir: Annotated[
        str | None,
        Field(default=None, description="Directory with dataset, embedding, graph and decoder files"),
    ]
    scenario_path: Annotated[
        str | None,
        Field(default=None, description="Scenario JSON file; the packaged default when omitted"),
    ]
    seed: Annotated[int, Field(default=0, description="Noise and throw-jitter seed")]
    adaptive: Annotated[
        bool,
        Field(default=True, description="Relabel and reroute around moving obstacles"),
    ]
    interpolation: Annotated[
        Literal["joint", "decoder"],
        Field(default="joint", description="Edge execution: linear joints or decoded latent points"),
    ]
    catch_tolerance: Annotated[
        float | None,
        Field(default=None, gt=0.0, description="Catch radius in metres"),
    ]
    trace_path: Annotated[
        str | None,
        Field(default=None, description="Write the per-tick trace CSV here (optional)"),
    ]


class BatchRunV1Request(BaseModel):
    """V1: Run a seeded batch of one scenario."""

    artifact_dir: Annotated[str | None, Field(default=None, description="Artifact directory")]
    scenario_path: Annotated[str | None, Field(default=None, description="Scenario JSON file")]
    seeds: Annotated[
        list[int],
        Field(min_length=1, max_length=1000, description="Seeds; each jitters the throw"),
    ]
    adaptive: Annotated[bool, Field(default=True, description="Adaptive rerouting")]
    workers: Annotated[int, Field(default=1, ge=1, le=64, description="Process workers")]

    @field_validator("seeds")
    @classmethod
    def validate_unique(cls, v: list[int]) -> list[int]:
        """Seeds must be distinct."""
        if len(set(v)) != len(v):
            raise ValueError("seeds must be unique")
        return v


class PlanRouteV1Request(BaseModel):
    """V1: Shortest route between two graph nodes."""

    artifact_dir: Annotated[str | None, Field(default=None, description="Artifact directory")]
    source: Annotated[int, Field(ge=0, description="Start node (dataset row index)")]
    target: Annotated[
        int | None,
        Field(default=None, ge=0, description="Goal node; give this or target_point"),
    ]
    target_point: Annotated[
        tuple[float, float, float] | None,
        Field(default=None, description="Goal end-effector position (m); nearest safe node is used"),
    ]
    blocked: Annotated[
        list[int],
        Field(default_factory=list, description="Nodes to treat as blocked"),
    ]

    @field_validator("blocked")
    @classmethod
    def validate_blocked(cls, v: list[int]) -> list[int]:
        """Blocked node ids are non-negative."""
        if any(n < 0 for n in v):
            raise ValueError("blocked nodes must be >= 0")
        return v
