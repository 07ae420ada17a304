"""File-backed artifact storage."""

from manifold_intercept.infrastructure.storage.codecs import (
    ArtifactFormatError,
    DatasetParseError,
    DatasetSchemaError,
    write_metrics_csv,
    write_trace_csv,
)
from manifold_intercept.infrastructure.storage.repository import (
    DATASET_FILE,
    DECODER_FILE,
    DEFAULT_ARM_MODEL,
    DEFAULT_SCENARIO,
    EMBEDDING_FILE,
    GRAPH_FILE,
    FileArtifactRepository,
    build_scenario_config,
    load_scenario,
)

__all__ = [
    "ArtifactFormatError",
    "DATASET_FILE",
    "DECODER_FILE",
    "DEFAULT_ARM_MODEL",
    "DEFAULT_SCENARIO",
    "DatasetParseError",
    "DatasetSchemaError",
    "EMBEDDING_FILE",
    "FileArtifactRepository",
    "GRAPH_FILE",
    "build_scenario_config",
    "load_scenario",
    "write_metrics_csv",
    "write_trace_csv",
]
