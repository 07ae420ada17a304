"""Repository interface for pipeline artifacts."""

from abc import ABC, abstractmethod
from pathlib import Path

from manifold_intercept.domain.dataset import Dataset
from manifold_intercept.domain.decoder import DecoderNet
from manifold_intercept.domain.manifold import Embedding
from manifold_intercept.domain.planning import PlanGraph
from manifold_intercept.domain.value_objects import ArmModel


class IArtifactRepository(ABC):
    """
    Interface for loading and storing pipeline artifacts.

    The runner depends only on this interface; the file-backed implementation
    lives in the infrastructure layer.
    """

    @abstractmethod
    def load_arm_model(self, path: Path | None = None) -> ArmModel:
        """
        Load an arm model.

        Args:
            path: Model JSON; implementations fall back to a default model.

        Raises:
            ConfigError: If the file is missing or invalid.
        """
        pass

    @abstractmethod
    def load_dataset(self, path: Path) -> Dataset:
        """
        Load a dataset.

        Raises:
            DatasetParseError: If a row cannot be parsed.
            DatasetSchemaError: If columns or metadata are missing.
        """
        pass

    @abstractmethod
    def save_dataset(self, ds: Dataset, path: Path) -> Path:
        """Persist a dataset and return the written path."""
        pass

    @abstractmethod
    def load_embedding(self, path: Path) -> Embedding:
        """Load latent coordinates and their metadata."""
        pass

    @abstractmethod
    def save_embedding(self, emb: Embedding, path: Path) -> Path:
        """Persist an embedding."""
        pass

    @abstractmethod
    def load_graph(self, path: Path) -> PlanGraph:
        """Load a routing graph."""
        pass

    @abstractmethod
    def save_graph(self, g: PlanGraph, path: Path) -> Path:
        """Persist a routing graph."""
        pass

    @abstractmethod
    def load_decoder(self, path: Path) -> DecoderNet:
        """
        Load decoder weights.

        Raises:
            ArchitectureMismatchError: If the stored network does not fit.
        """
        pass

    @abstractmethod
    def save_decoder(self, net: DecoderNet, path: Path) -> Path:
        """Persist decoder weights with their architecture header."""
        pass
