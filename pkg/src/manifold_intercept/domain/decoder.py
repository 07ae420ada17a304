"""Latent-to-joint decoder network, its training loop and quality reports."""

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree
from torch import nn

from manifold_intercept.domain.dataset import Dataset
from manifold_intercept.domain.manifold import Embedding
from manifold_intercept.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

ACTIVATION = "tanh"
DIVERGENCE_FACTOR = 10.0


class DecoderNet(nn.Module):
    """
    Feed-forward regressor ``z -> theta`` with two tanh hidden layers.

    Inputs and outputs are normalised inside the module; callers pass raw
    latent coordinates and receive radians.
    """

    def __init__(self, input_dim: int = 2, hidden: int = 64, output_dim: int = 7):
        super().__init__()
        self.input_dim = input_dim
        self.hidden = hidden
        self.output_dim = output_dim
        self.layers = nn.Sequential(
            nn.Linear(input_dim, hidden),
            nn.Tanh(),
            nn.Linear(hidden, hidden),
            nn.Tanh(),
            nn.Linear(hidden, output_dim),
        ).double()
        self.register_buffer("z_mean", torch.zeros(input_dim, dtype=torch.float64))
        self.register_buffer("z_scale", torch.ones(input_dim, dtype=torch.float64))
        self.register_buffer("theta_mean", torch.zeros(output_dim, dtype=torch.float64))
        self.register_buffer("theta_scale", torch.ones(output_dim, dtype=torch.float64))
        self.register_buffer(
            "limits",
            torch.tensor([[-np.inf, np.inf]] * output_dim, dtype=torch.float64),
        )
        self.dataset_hash = ""
        self.embedding_hash = ""

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """Raw latent points to unclamped joint angles (radians)."""
        zn = (z - self.z_mean) / self.z_scale
        return self.layers(zn) * self.theta_scale + self.theta_mean

    def set_normalisation(self, z: np.ndarray, theta: np.ndarray, limits: np.ndarray | None) -> None:
        def _scale(x):
            s = x.std(axis=0)
            return np.where(s > 1e-12, s, 1.0)

        self.z_mean.copy_(torch.from_numpy(z.mean(axis=0)))
        self.z_scale.copy_(torch.from_numpy(_scale(z)))
        self.theta_mean.copy_(torch.from_numpy(theta.mean(axis=0)))
        self.theta_scale.copy_(torch.from_numpy(_scale(theta)))
        if limits is not None:
            self.limits.copy_(torch.from_numpy(np.asarray(limits, dtype=float)))

    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "output_dim": self.output_dim,
            "activation": ACTIVATION,
        }

    def to_payload(self) -> dict:
        """Architecture header, hashes and every tensor as nested lists."""
        return {
            "architecture": self.architecture(),
            "dataset_hash": self.dataset_hash,
            "embedding_hash": self.embedding_hash,
            "state": {k: v.tolist() for k, v in self.state_dict().items()},
        }

    @classmethod
    def from_payload(cls, payload: dict, expected: dict | None = None) -> "DecoderNet":
        """
        Rebuild a network from ``to_payload`` output.

        Args:
            payload: Serialised network.
            expected: Architecture the caller requires, if any.

        Raises:
            ArchitectureMismatchError: If the header or tensor shapes disagree.
        """
        arch = payload.get("architecture", {})
        if arch.get("activation") != ACTIVATION:
            raise ArchitectureMismatchError(f"unsupported activation {arch.get('activation')!r}")
        if expected is not None and any(arch.get(k) != v for k, v in expected.items()):
            raise ArchitectureMismatchError(f"decoder architecture {arch} does not match {expected}")
        net = cls(input_dim=arch["input_dim"], hidden=arch["hidden"], output_dim=arch["output_dim"])
        own = net.state_dict()
        state = {}
        for name, tensor in own.items():
            if name not in payload["state"]:
                raise ArchitectureMismatchError(f"missing tensor {name!r}")
            value = torch.tensor(payload["state"][name], dtype=torch.float64)
            if value.shape != tensor.shape:
                raise ArchitectureMismatchError(
                    f"tensor {name!r} has shape {tuple(value.shape)}, expected {tuple(tensor.shape)}"
                )
            state[name] = value
        net.load_state_dict(state)
        net.dataset_hash = payload.get("dataset_hash", "")
        net.embedding_hash = payload.get("embedding_hash", "")
        net.eval()
        return net


@dataclass(frozen=True)
class TrainHyper:
    """Optimiser settings for mini-batch momentum gradient descent."""

    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 64
    validation_fraction: float = 0.1
    hidden: int = 64
    seed: int = 0


@dataclass(frozen=True)
class TrainReport:
    """Losses are batch means of the squared joint-vector error ``||theta - psi(z)||^2`` in rad^2."""

    epochs: int
    train_loss: float
    validation_loss: float
    best_epoch: int
    loss_curve: list[float] = field(default_factory=list)
    validation_curve: list[float] = field(default_factory=list)
    checkpoint_losses: list[float] = field(default_factory=list)


def _loss(net: DecoderNet, z: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    return ((net(z) - theta) ** 2).sum(dim=1).mean()


def fit(
    z: np.ndarray,
    theta: np.ndarray,
    hyper: TrainHyper = TrainHyper(),
    limits: np.ndarray | None = None,
) -> tuple[DecoderNet, TrainReport]:
    """
    Fit a decoder to paired latent points and joint vectors.

    Args:
        z: Latent points, shape (n, d).
        theta: Joint targets in radians, shape (n, 7).
        hyper: Optimiser settings.
        limits: Joint limits used by ``decode`` to clamp outputs.

    Returns:
        The best-validation network and its training report.

    Raises:
        TrainingDivergedError: If the loss becomes non-finite or exceeds ten times its start.
    """
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if len(z) != len(theta):
        raise ConfigError(f"{len(z)} latent points but {len(theta)} joint vectors")
    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(len(z))
    n_val = int(round(hyper.validation_fraction * len(z))) if len(z) > 1 else 0
    n_val = min(max(n_val, 1 if len(z) > 1 else 0), len(z) - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if n_val == 0:
        val_idx = train_idx

    with torch.random.fork_rng():
        torch.manual_seed(hyper.seed)
        net = DecoderNet(input_dim=z.shape[1], hidden=hyper.hidden, output_dim=theta.shape[1])
    net.set_normalisation(z[train_idx], theta[train_idx], limits)

    zt, tt = torch.from_numpy(z), torch.from_numpy(theta)
    z_train, t_train = zt[train_idx], tt[train_idx]
    z_val, t_val = zt[val_idx], tt[val_idx]
    optimizer = torch.optim.SGD(net.parameters(), lr=hyper.learning_rate, momentum=hyper.momentum)

    with torch.no_grad():
        initial = float(_loss(net, z_train, t_train))
        best_val = float(_loss(net, z_val, t_val))
    best_state = copy.deepcopy(net.state_dict())
    best_epoch = 0
    curve, val_curve, checkpoints = [], [], [best_val]

    for epoch in range(1, hyper.epochs + 1):
        net.train()
        perm = rng.permutation(len(train_idx))
        for start in range(0, len(perm), hyper.batch_size):
            batch = torch.from_numpy(perm[start : start + hyper.batch_size])
            optimizer.zero_grad()
            loss = _loss(net, z_train[batch], t_train[batch])
            loss.backward()
            optimizer.step()

        net.eval()
        with torch.no_grad():
            train_loss = float(_loss(net, z_train, t_train))
            val_loss = float(_loss(net, z_val, t_val))
        curve.append(train_loss)
        val_curve.append(val_loss)
        if not np.isfinite(train_loss) or train_loss > DIVERGENCE_FACTOR * max(initial, 1e-12):
            raise TrainingDivergedError(
                f"decoder training diverged at epoch {epoch}: loss {train_loss:.4g} vs initial {initial:.4g}",
                details={"epoch": epoch, "loss": train_loss, "initial_loss": initial},
            )
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_state = copy.deepcopy(net.state_dict())
            checkpoints.append(val_loss)

    net.load_state_dict(best_state)
    net.eval()
    with torch.no_grad():
        final_train = float(_loss(net, z_train, t_train))
    logger.info(
        "Decoder trained: best epoch %d, train %.4g rad^2, validation %.4g rad^2",
        best_epoch,
        final_train,
        best_val,
    )
    return net, TrainReport(
        epochs=hyper.epochs,
        train_loss=final_train,
        validation_loss=best_val,
        best_epoch=best_epoch,
        loss_curve=curve,
        validation_curve=val_curve,
        checkpoint_losses=checkpoints,
    )


def train(
    emb: Embedding,
    ds: Dataset,
    hyper: TrainHyper = TrainHyper(),
    limits: np.ndarray | None = None,
) -> tuple[DecoderNet, TrainReport]:
    """Train on every index-aligned (coords[i], theta_i) pair and stamp artifact hashes."""
    if len(emb) != len(ds):
        raise ConfigError(f"embedding has {len(emb)} rows, dataset {len(ds)}")
    net, report = fit(emb.coords, ds.theta, hyper, limits)
    net.dataset_hash = ds.content_hash()
    net.embedding_hash = emb.content_hash()
    return net, report


def decode_raw(net: DecoderNet, z) -> np.ndarray:
    """Unclamped decoder output for one point (d,) or a batch (m, d)."""
    with torch.no_grad():
        out = net(torch.as_tensor(np.atleast_2d(np.asarray(z, dtype=float)))).numpy()
    return out[0] if np.ndim(z) == 1 else out


def decode(net: DecoderNet, z) -> np.ndarray:
    """Decoded joint vector(s), clamped to the stored joint limits."""
    raw = decode_raw(net, z)
    limits = net.limits.numpy()
    clamped = np.clip(raw, limits[:, 0], limits[:, 1])
    if not np.array_equal(raw, clamped):
        logger.warning(
            "Decoder output clamped to joint limits (max excess %.4f rad)",
            float(np.max(np.abs(raw - clamped))),
        )
    return clamped


def interpolate_edge(
    net: DecoderNet,
    z_a: np.ndarray,
    z_b: np.ndarray,
    theta_a: np.ndarray,
    theta_b: np.ndarray,
    substeps: int,
) -> np.ndarray:
    """
    Joint waypoints along a latent edge, decoded and corrected by endpoint residuals.

    The last row equals ``theta_b`` exactly and the implied start equals ``theta_a``.

    Returns:
        Array of shape (substeps, n_joints) for fractions 1/N .. N/N.
    """
    fractions = np.arange(1, substeps + 1) / substeps
    zs = (1.0 - fractions)[:, None] * z_a + fractions[:, None] * z_b
    res_a = np.asarray(theta_a) - decode_raw(net, z_a)
    res_b = np.asarray(theta_b) - decode_raw(net, z_b)
    out = decode_raw(net, zs) + (1.0 - fractions)[:, None] * res_a + fractions[:, None] * res_b
    out[-1] = theta_b
    limits = net.limits.numpy()
    return np.clip(out, limits[:, 0], limits[:, 1])


def gradient_check(
    net: DecoderNet,
    n_probes: int = 100,
    seed: int = 0,
    step: float = 1e-5,
    inputs: np.ndarray | None = None,
) -> float:
    """
    Compare autograd parameter gradients with central finite differences.

    Args:
        net: Network to probe; its weights are restored afterwards.
        n_probes: Number of random scalar weights to probe.
        seed: Seed for the probe batch and probe selection.
        step: Finite-difference step.
        inputs: Optional input batch; a seeded random batch otherwise.

    Returns:
        Maximum relative error over the probes.
    """
    rng = np.random.default_rng(seed)
    if inputs is None:
        inputs = rng.normal(size=(16, net.input_dim))
    z = torch.from_numpy(np.asarray(inputs, dtype=float))
    target = torch.from_numpy(rng.normal(size=(len(z), net.output_dim)))

    net.zero_grad()
    _loss(net, z, target).backward()
    params = [p for p in net.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])

    worst = 0.0
    for _ in range(n_probes):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        flat = int(rng.integers(sizes[k]))
        param = params[k]
        analytic = float(param.grad.view(-1)[flat])
        with torch.no_grad():
            original = float(param.view(-1)[flat])
            param.view(-1)[flat] = original + step
            up = float(_loss(net, z, target))
            param.view(-1)[flat] = original - step
            down = float(_loss(net, z, target))
            param.view(-1)[flat] = original
        numeric = (up - down) / (2.0 * step)
        denom = max(abs(analytic), abs(numeric), 1e-7)
        worst = max(worst, abs(analytic - numeric) / denom)
    net.zero_grad()
    return worst


@dataclass(frozen=True)
class ReconstructionReport:
    """Decoder fidelity over the dataset."""

    median_error: float
    max_error: float
    duplicate_decodes: int
    variance_ratio: np.ndarray

    @property
    def collapsed(self) -> bool:
        return bool((self.variance_ratio < 0.1).any())


def reconstruction_report(net: DecoderNet, emb: Embedding, ds: Dataset) -> ReconstructionReport:
    """
    One-to-one and anti-collapse checks.

    Errors are joint-space Euclidean norms over safe nodes. A duplicate is a
    pair of nodes further apart than the 10th-percentile latent spacing that
    decode to the same joint vector.
    """
    safe = ds.safe_indices
    decoded = decode(net, emb.coords)
    errors = np.linalg.norm(decoded[safe] - ds.theta[safe], axis=1)

    spacing_d, _ = emb.tree.query(emb.coords, k=2)
    spacing = float(np.percentile(spacing_d[:, 1], 10))
    pairs = cKDTree(decoded[safe]).query_pairs(r=1e-9)
    duplicates = sum(
        1 for a, b in pairs if np.linalg.norm(emb.coords[safe[a]] - emb.coords[safe[b]]) > spacing
    )

    target_var = ds.theta.var(axis=0)
    ratio = decoded.var(axis=0) / np.where(target_var > 1e-12, target_var, 1.0)
    return ReconstructionReport(
        median_error=float(np.median(errors)) if len(errors) else float("nan"),
        max_error=float(errors.max()) if len(errors) else float("nan"),
        duplicate_decodes=duplicates,
        variance_ratio=ratio,
    )


class TrainingDivergedError(NumericalError):
    """Raised when decoder training diverges."""

    pass


class ArchitectureMismatchError(ConfigError):
    """Raised when stored decoder weights do not fit the expected network."""

    pass
