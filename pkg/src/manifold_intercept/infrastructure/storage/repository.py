"""File implementation of the artifact repository."""

import logging
from importlib.resources import files
from pathlib import Path

from pydantic import ValidationError

from manifold_intercept.config import Settings
from manifold_intercept.domain.dataset import Dataset
from manifold_intercept.domain.decoder import DecoderNet
from manifold_intercept.domain.manifold import Embedding
from manifold_intercept.domain.planning import PlanGraph
from manifold_intercept.domain.repository import IArtifactRepository
from manifold_intercept.domain.value_objects import ArmModel, Scenario, ScenarioConfig
from manifold_intercept.errors import ConfigError
from manifold_intercept.infrastructure.storage import codecs

logger = logging.getLogger(__name__)

DEFAULT_ARM_MODEL = Path(str(files("manifold_intercept") / "data" / "panda.json"))
DEFAULT_SCENARIO = Path(str(files("manifold_intercept") / "data" / "scenario.json"))


def _load_model(cls, path: Path, what: str):
    try:
        return cls.from_json_file(path)
    except FileNotFoundError as e:
        raise ConfigError(f"{what} file not found: {path}") from e
    except ValidationError as e:
        raise ConfigError(f"invalid {what} {path}: {e}") from e


def load_scenario(path: Path | None = None) -> Scenario:
    """
    Load a scenario, defaulting to the packaged one.

    Raises:
        ConfigError: If the file is missing or fails validation.
    """
    return _load_model(Scenario, Path(path) if path else DEFAULT_SCENARIO, "scenario")


class FileArtifactRepository(IArtifactRepository):
    """Reads and writes artifacts as text files; relative paths resolve under ``root``."""

    def __init__(self, root: Path | None = None):
        """Initialize with an optional artifact directory."""
        self._root = Path(root) if root else None

    def _resolve(self, path: Path) -> Path:
        path = Path(path)
        if self._root is not None and not path.is_absolute():
            return self._root / path
        return path

    def load_arm_model(self, path: Path | None = None) -> ArmModel:
        model = _load_model(ArmModel, self._resolve(path) if path else DEFAULT_ARM_MODEL, "arm model")
        logger.debug("Loaded arm model %s (%d joints)", model.name, model.n_joints)
        return model

    def load_dataset(self, path: Path) -> Dataset:
        ds = codecs.load_dataset(self._resolve(path))
        logger.info("Loaded %d samples from %s", len(ds), path)
        return ds

    def save_dataset(self, ds: Dataset, path: Path) -> Path:
        return codecs.save_dataset(ds, self._resolve(path))

    def load_embedding(self, path: Path) -> Embedding:
        return codecs.load_embedding(self._resolve(path))

    def save_embedding(self, emb: Embedding, path: Path) -> Path:
        return codecs.save_embedding(emb, self._resolve(path))

    def load_graph(self, path: Path) -> PlanGraph:
        g = codecs.load_graph(self._resolve(path))
        logger.info("Loaded graph with %d nodes (k=%d) from %s", len(g), g.k, path)
        return g

    def save_graph(self, g: PlanGraph, path: Path) -> Path:
        return codecs.save_graph(g, self._resolve(path))

    def load_decoder(self, path: Path) -> DecoderNet:
        return codecs.load_decoder(self._resolve(path))

    def save_decoder(self, net: DecoderNet, path: Path) -> Path:
        return codecs.save_decoder(net, self._resolve(path))


DATASET_FILE = "dataset.csv"
EMBEDDING_FILE = "embedding.csv"
GRAPH_FILE = "graph.jsonl"
DECODER_FILE = "decoder.json"


def build_scenario_config(
    settings: Settings,
    scenario: Scenario,
    artifact_dir: Path | None = None,
    seed: int | None = None,
    **overrides,
) -> ScenarioConfig:
    """
    Point a run at the standard artifact files under ``artifact_dir``.

    The decoder is attached only when its file exists. Runner options come from
    ``settings`` unless given in ``overrides``.
    """
    root = Path(artifact_dir or settings.artifact_dir)
    decoder = root / DECODER_FILE
    options = {
        "tick": settings.control_tick,
        "catch_tolerance": settings.catch_tolerance,
        "substeps": settings.substeps,
        "interpolation": settings.interpolation,
        "adaptive": settings.adaptive,
    }
    options.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ScenarioConfig(
            dataset_path=root / DATASET_FILE,
            embedding_path=root / EMBEDDING_FILE,
            graph_path=root / GRAPH_FILE,
            decoder_path=decoder if decoder.exists() else None,
            arm_model_path=settings.arm_model_path,
            scenario=scenario,
            seed=settings.seed if seed is None else seed,
            **options,
        )
    except ValidationError as e:
        raise ConfigError(f"invalid run options: {e}") from e
