"""Configuration management for Manifold Intercept."""

import json
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from manifold_intercept.errors import ConfigError


class Settings(BaseSettings):
    """Pipeline settings loaded from environment variables and config files."""

    model_config = SettingsConfigDict(
        env_prefix="MI_",
        env_file=(f".env.{os.getenv('ENV', 'development')}", ".env"),
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Environment
    env: Literal["test", "development", "production"] = Field(
        default="development",
        description="Application environment",
    )
    log_level: str = Field(default="INFO", description="Root log level for entry points")

    # Artifacts
    artifact_dir: Path = Field(
        default=Path("artifacts"),
        description="Directory holding dataset, embedding, graph and decoder files",
    )
    arm_model_path: Path | None = Field(
        default=None,
        description="Arm model JSON; the packaged Panda model when unset",
    )
    scenario_path: Path | None = Field(
        default=None,
        description="Scenario JSON; the packaged default scenario when unset",
    )
    seed: int = Field(default=42, description="Master seed for every stochastic stage")
    workers: int = Field(default=1, description="Process workers for generation and batches")

    # Dataset
    n_samples: int = Field(default=5000, description="Number of samples to generate")
    label_margin: float = Field(default=0.05, description="Safety barrier around obstacles (m)")
    obstacle_box_lo: tuple[float, float, float] = Field(default=(-0.8, -0.8, 0.0))
    obstacle_box_hi: tuple[float, float, float] = Field(default=(0.8, 0.8, 1.2))

    # Manifold
    kernel_knn: int = Field(default=16, description="k for the median bandwidth heuristic")
    diffusion_steps: int = Field(default=1, description="Diffusion time t")
    latent_dims: int = Field(default=2, description="Retained diffusion coordinates")
    sparse_threshold: int = Field(
        default=4000,
        description="Above this many samples the kernel is kNN-sparsified",
    )
    sparse_mutual_k: int = Field(default=64, description="Mutual k for the sparse kernel")

    # Decoder
    decoder_hidden: int = Field(default=64)
    decoder_learning_rate: float = Field(default=0.01)
    decoder_momentum: float = Field(default=0.9)
    decoder_epochs: int = Field(default=300)
    decoder_batch_size: int = Field(default=64)
    decoder_validation_fraction: float = Field(default=0.1)

    # Planning graph
    graph_k: int = Field(default=8, description="Nearest neighbours per safe node")
    relabel_tube_radius: float = Field(
        default=0.0,
        description="Latent radius around the active route re-checked each tick; 0 means auto",
    )

    # Tracker
    ekf_window: int = Field(default=5, description="Frames in the feature-velocity window")
    repredict_after_frames: int = Field(default=8, description="Frames before the second estimate")
    pinv_tolerance: float = Field(default=1e-8)
    ekf_p0_diag: tuple[float, float, float] = Field(default=(25.0, 25.0, 0.25))
    ekf_q_diag: tuple[float, float, float] = Field(default=(1.0, 1.0, 0.01))
    ekf_min_depth: float = Field(default=0.05, description="Depth clamp floor (m)")
    intercept_horizon: float = Field(default=1.5, description="Prediction horizon (s)")
    ballistic_forecast: bool = Field(
        default=True,
        description="Forecast the ball in world space under the scenario gravity",
    )

    # Collision
    clearance_sentinel: float = Field(
        default=1.0e3,
        description="Clearance reported when no obstacle is present (m)",
    )

    # Runner
    control_tick: float = Field(default=1.0 / 30.0, description="Control period (s)")
    substeps: int = Field(default=4, description="Joint interpolation substeps per edge")
    catch_tolerance: float = Field(default=0.10, description="Catch radius epsilon (m)")
    interpolation: Literal["joint", "decoder"] = Field(default="joint")
    adaptive: bool = Field(default=True, description="Relabel and reroute against obstacles")

    @field_validator(
        "control_tick",
        "catch_tolerance",
        "label_margin",
        "pinv_tolerance",
        "decoder_learning_rate",
        "intercept_horizon",
    )
    @classmethod
    def validate_positive(cls, v: float) -> float:
        """Reject non-positive tolerances and periods."""
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("decoder_validation_fraction")
    @classmethod
    def validate_fraction(cls, v: float) -> float:
        """Validation split must leave data on both sides."""
        if not 0.0 < v < 1.0:
            raise ValueError("must lie strictly between 0 and 1")
        return v

    @field_validator("n_samples", "substeps", "graph_k", "ekf_window", "diffusion_steps")
    @classmethod
    def validate_count(cls, v: int) -> int:
        """Counts must be at least one."""
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    def with_overrides(self, config_path: Path | None = None, **overrides: Any) -> "Settings":
        """
        Return a copy with values from a JSON config file and explicit overrides.

        Args:
            config_path: Optional JSON file with a flat mapping of setting names.
            **overrides: Values that win over both the file and the environment.

        Returns:
            A validated Settings instance.

        Raises:
            ConfigError: If the file is unreadable or a value fails validation.
        """
        data = self.model_dump()
        if config_path is not None:
            try:
                data.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"Cannot read config file {config_path}: {e}") from e
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return Settings(**data)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    def dense_kernel(self, n: int) -> bool:
        """Whether an n-sample kernel is built dense for the exact eigensolver."""
        return n <= self.sparse_threshold


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Convenience accessor
settings = get_settings()
