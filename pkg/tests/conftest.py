"""Test configuration and fixtures."""

import math
from pathlib import Path

import numpy as np
import pytest

from manifold_intercept.config import Settings
from manifold_intercept.domain.dataset import Dataset, generate
from manifold_intercept.domain.decoder import DecoderNet, TrainHyper, train
from manifold_intercept.domain.kinematics import end_effector_position
from manifold_intercept.domain.manifold import Embedding, build_operator, embed
from manifold_intercept.domain.planning import PlanGraph, build_graph
from manifold_intercept.domain.repository import IArtifactRepository
from manifold_intercept.domain.services import PipelineArtifacts
from manifold_intercept.domain.value_objects import (
    ArmModel,
    BallState,
    CameraModel,
    CapsuleSpec,
    DhRow,
    Scenario,
    ScenarioConfig,
)
from manifold_intercept.infrastructure.storage import DEFAULT_ARM_MODEL

OBSTACLE_BOX = ((-0.8, -0.8, 0.0), (0.8, 0.8, 1.2))


# ============================================
# Test settings
# ============================================
@pytest.fixture
def test_settings(tmp_path) -> Settings:
    """Create test settings with small, fast tunables."""
    return Settings(
        env="test",
        artifact_dir=tmp_path / "artifacts",
        seed=11,
        n_samples=60,
        decoder_epochs=10,
        decoder_batch_size=16,
    )


# ============================================
# Arm and sensor fixtures
# ============================================
@pytest.fixture(scope="session")
def panda() -> ArmModel:
    """Packaged Panda model."""
    return ArmModel.from_json_file(DEFAULT_ARM_MODEL)


@pytest.fixture
def planar_arm() -> ArmModel:
    """Two unit links in the base xy-plane."""
    return ArmModel(
        name="planar",
        dh_rows=[
            DhRow(a=0.0, d=0.0, alpha=0.0),
            DhRow(a=1.0, d=0.0, alpha=0.0),
            DhRow(a=1.0, d=0.0, alpha=0.0, revolute=False),
        ],
        joint_limits=[(-math.pi, math.pi), (-math.pi, math.pi)],
        link_shapes=[
            CapsuleSpec(frame=1, p0=(0.0, 0.0, 0.0), p1=(1.0, 0.0, 0.0), radius=0.05),
            CapsuleSpec(frame=2, p0=(0.0, 0.0, 0.0), p1=(1.0, 0.0, 0.0), radius=0.05),
        ],
    )


@pytest.fixture
def identity_camera() -> CameraModel:
    """Noise-free camera at the origin looking along +z."""
    return CameraModel(focal_length=500.0)


# ============================================
# Pipeline fixtures
# ============================================
@pytest.fixture(scope="session")
def small_dataset(panda) -> Dataset:
    """150 seeded Panda samples."""
    return generate(panda, 150, OBSTACLE_BOX, seed=11)


@pytest.fixture(scope="session")
def small_embedding(small_dataset) -> Embedding:
    """Two diffusion coordinates of the small dataset."""
    return embed(build_operator(small_dataset), dims=2)


@pytest.fixture(scope="session")
def small_decoder(small_dataset, small_embedding, panda) -> DecoderNet:
    """Briefly trained decoder."""
    net, _ = train(small_embedding, small_dataset, TrainHyper(epochs=30, batch_size=32), panda.limits)
    return net


@pytest.fixture
def small_graph(small_dataset, small_embedding) -> PlanGraph:
    """Routing graph over the small embedding."""
    return build_graph(small_embedding, small_dataset, k=8)


@pytest.fixture
def artifacts(panda, small_dataset, small_embedding, small_graph, small_decoder) -> PipelineArtifacts:
    """Verified artifact bundle."""
    bundle = PipelineArtifacts(
        model=panda,
        dataset=small_dataset,
        embedding=small_embedding,
        graph=small_graph,
        decoder=small_decoder,
    )
    bundle.verify()
    return bundle


class InMemoryArtifactRepository(IArtifactRepository):
    """Serves one fixed bundle whatever path is asked for."""

    def __init__(self, bundle: PipelineArtifacts):
        self.bundle = bundle

    def load_arm_model(self, path: Path | None = None) -> ArmModel:
        return self.bundle.model

    def load_dataset(self, path: Path) -> Dataset:
        return self.bundle.dataset

    def save_dataset(self, ds: Dataset, path: Path) -> Path:
        return Path(path)

    def load_embedding(self, path: Path) -> Embedding:
        return self.bundle.embedding

    def save_embedding(self, emb: Embedding, path: Path) -> Path:
        return Path(path)

    def load_graph(self, path: Path) -> PlanGraph:
        return self.bundle.graph

    def save_graph(self, g: PlanGraph, path: Path) -> Path:
        return Path(path)

    def load_decoder(self, path: Path) -> DecoderNet:
        return self.bundle.decoder

    def save_decoder(self, net: DecoderNet, path: Path) -> Path:
        return Path(path)


@pytest.fixture
def memory_repository(artifacts) -> InMemoryArtifactRepository:
    """Repository over the fixture artifacts."""
    return InMemoryArtifactRepository(artifacts)


# ============================================
# Scenario fixtures
# ============================================
@pytest.fixture
def start_node(artifacts) -> int:
    """Lowest routable node whose end effector sits well above the floor."""
    ds, g = artifacts.dataset, artifacts.graph
    for node in sorted(g.giant):
        if ds.ee_position[node][2] > 0.3:
            return node
    return min(g.giant)


@pytest.fixture
def make_scenario(identity_camera):
    """Factory for gravity-free scenarios seen by the identity camera."""

    def _make(position, velocity, **kwargs) -> Scenario:
        defaults = {
            "name": "test",
            "duration": 0.5,
            "gravity": (0.0, 0.0, 0.0),
            "ball": BallState(position=tuple(position), velocity=tuple(velocity)),
            "camera": identity_camera,
        }
        defaults.update(kwargs)
        return Scenario(**defaults)

    return _make


@pytest.fixture
def easy_scenario(make_scenario, artifacts, start_node) -> Scenario:
    """Ball dropped straight onto the resting end effector."""
    ee = end_effector_position(artifacts.model, artifacts.dataset.theta[start_node])
    return make_scenario(
        ee + np.array([0.0, 0.0, 0.15]),
        (0.0, 0.0, -2.0),
        name="easy",
        start_joints=[float(v) for v in artifacts.dataset.theta[start_node]],
    )


@pytest.fixture
def make_config():
    """Factory wrapping a scenario with placeholder artifact paths."""

    def _make(scenario: Scenario, **kwargs) -> ScenarioConfig:
        return ScenarioConfig(
            dataset_path=Path("dataset.csv"),
            embedding_path=Path("embedding.csv"),
            graph_path=Path("graph.jsonl"),
            decoder_path=Path("decoder.json"),
            scenario=scenario,
            **kwargs,
        )

    return _make
