"""Diffusion-map embedding of the sample space and latent-space utilities."""

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from scipy.linalg import LinAlgError, eigh
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from manifold_intercept.domain.dataset import Dataset
from manifold_intercept.errors import NumericalError

logger = logging.getLogger(__name__)

DEFAULT_BANDWIDTH_K = 16


@dataclass(frozen=True)
class DiffusionOperator:
    """
    Row-normalised Gaussian kernel ``P = D^-1 K``.

    ``kernel`` is dense for desk-scale data and CSR when sparsified.
    """

    kernel: np.ndarray | sps.csr_matrix
    degree: np.ndarray
    alpha: float
    steps: int = 1
    dataset_hash: str = ""

    @property
    def n(self) -> int:
        return self.kernel.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sps.issparse(self.kernel)

    @cached_property
    def P(self) -> np.ndarray | sps.csr_matrix:
        """Transition matrix."""
        if self.is_sparse:
            return sps.csr_matrix(sps.diags(1.0 / self.degree) @ self.kernel)
        return self.kernel / self.degree[:, None]

    @property
    def stationary(self) -> np.ndarray:
        """Stationary measure ``d / sum(d)``."""
        return self.degree / self.degree.sum()

    def transition_rows(self, indices, steps: int | None = None) -> np.ndarray:
        """Rows of ``P^t`` for the given indices as a dense array."""
        steps = self.steps if steps is None else steps
        rows = np.zeros((len(indices), self.n))
        rows[np.arange(len(indices)), list(indices)] = 1.0
        for _ in range(steps):
            rows = np.asarray((self.P.T @ rows.T).T)
        return rows


@dataclass(frozen=True)
class Embedding:
    """
    Diffusion coordinates ``coords[i, j] = lambda_j^t psi_j(i)`` for sample ``i``.

    The trivial pair (eigenvalue 1, constant eigenvector) is excluded.
    """

    coords: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    alpha: float
    steps: int
    dataset_hash: str = ""

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def dims(self) -> int:
        return self.coords.shape[1]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.coords)

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.coords, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.eigenvalues, dtype="<f8").tobytes())
        digest.update(self.dataset_hash.encode())
        return digest.hexdigest()


# ============================================
# Kernel
# ============================================
def median_knn_bandwidth(features: np.ndarray, k: int = DEFAULT_BANDWIDTH_K) -> float:
    """Median of squared distances from every point to its ``k`` nearest neighbours."""
    n = len(features)
    k = min(k, n - 1)
    dists, _ = cKDTree(features).query(features, k=k + 1)
    return float(np.median(np.square(dists[:, 1:])))


def _as_features(data: Dataset | np.ndarray) -> tuple[np.ndarray, str]:
    if isinstance(data, Dataset):
        return data.features(), data.content_hash()
    return np.asarray(data, dtype=float), ""


def _mutual_knn_kernel(features: np.ndarray, alpha: float, k: int) -> sps.csr_matrix:
    n = len(features)
    k = min(k, n - 1)
    dists, idx = cKDTree(features).query(features, k=k + 1)
    rows = np.repeat(np.arange(n), k + 1)
    directed = sps.csr_matrix(
        (np.exp(-np.square(dists.ravel()) / alpha), (rows, idx.ravel())),
        shape=(n, n),
    )
    # mutual: keep i-j only when each is in the other's list
    present = directed.copy()
    present.data[:] = 1.0
    mutual = present.multiply(present.T)
    kernel = directed.multiply(mutual)
    kernel = sps.csr_matrix(kernel.maximum(kernel.T))
    kernel.setdiag(1.0)
    kernel.eliminate_zeros()
    return kernel


def build_operator(
    data: Dataset | np.ndarray,
    alpha: float | None = None,
    knn_sparsify: int | None = None,
    steps: int = 1,
    bandwidth_k: int = DEFAULT_BANDWIDTH_K,
) -> DiffusionOperator:
    """
    Build the diffusion operator over scaled features.

    Args:
        data: A dataset (its scaled features are used) or a raw feature array.
        alpha: Kernel bandwidth; ``None`` uses the median kNN heuristic.
        knn_sparsify: Mutual k for a sparse kernel; ``None`` builds it dense.
        steps: Diffusion time ``t``.
        bandwidth_k: Neighbours for the bandwidth heuristic.

    Returns:
        DiffusionOperator.

    Raises:
        ConnectivityError: If the kernel graph splits into several components.
    """
    features, dataset_hash = _as_features(data)
    n = len(features)
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if steps < 1:
        raise ValueError("steps must be >= 1")

    if alpha is None:
        alpha = median_knn_bandwidth(features, bandwidth_k)
        if alpha <= 0.0:
            logger.warning("Median kNN distance is zero; falling back to alpha = 1")
            alpha = 1.0
    elif alpha <= 0.0:
        raise ValueError("alpha must be positive")

    if knn_sparsify is None:
        kernel = np.exp(-cdist(features, features, "sqeuclidean") / alpha)
        graph = sps.csr_matrix(kernel > 0.0)
    else:
        kernel = _mutual_knn_kernel(features, alpha, knn_sparsify)
        graph = kernel

    degree = np.asarray(kernel.sum(axis=1)).ravel()
    n_components, labels = connected_components(graph, directed=False)
    if n_components > 1:
        sizes = np.bincount(labels)
        raise ConnectivityError(
            f"kernel graph has {n_components} components",
            details={"components": int(n_components), "largest": int(sizes.max()), "alpha": alpha},
        )
    logger.debug("Built %s operator: n=%d alpha=%.4g t=%d", "sparse" if sps.issparse(kernel) else "dense", n, alpha, steps)
    return DiffusionOperator(kernel=kernel, degree=degree, alpha=float(alpha), steps=steps, dataset_hash=dataset_hash)


# ============================================
# Spectral embedding
# ============================================
def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its first non-negligible entry is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nonzero = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if len(nonzero) and col[nonzero[0]] < 0:
            out[:, j] = -col
    return out


def embed(op: DiffusionOperator, dims: int = 2) -> Embedding:
    """
    Eigendecompose ``P`` through its symmetric conjugate ``D^-1/2 K D^-1/2``.

    Right eigenvectors are normalised so ``psi^T D psi = sum(d)``; the
    Euclidean distance between full embeddings then equals the diffusion distance.

    Args:
        op: Diffusion operator.
        dims: Number of nontrivial coordinates to keep.

    Returns:
        Embedding with descending eigenvalues.

    Raises:
        EigenSolverError: If the eigensolver fails to converge.
    """
    n = op.n
    if not 1 <= dims < n:
        raise ValueError(f"dims must lie in [1, {n - 1}], got {dims}")
    inv_sqrt = 1.0 / np.sqrt(op.degree)

    try:
        if op.is_sparse:
            A = sps.diags(inv_sqrt) @ op.kernel @ sps.diags(inv_sqrt)
            values, vectors = eigsh(A, k=dims + 1, which="LA", tol=1e-12, maxiter=20 * n)
        else:
            A = op.kernel * np.outer(inv_sqrt, inv_sqrt)
            values, vectors = eigh((A + A.T) / 2.0)
    except (ArpackNoConvergence, ArpackError, LinAlgError) as e:
        raise EigenSolverError(
            f"eigensolver failed: {e}",
            details={"n": n, "dims": dims, "sparse": op.is_sparse},
        ) from e

    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    logger.debug("Leading eigenvalues: %s", np.array2string(values[: dims + 1], precision=6))
    if values[1] >= 1.0 - 1e-10:
        logger.warning("Second eigenvalue %.12f is 1; the kernel is nearly disconnected", values[1])

    psi = _fix_signs(vectors * inv_sqrt[:, None] * np.sqrt(op.degree.sum()))
    lam = values[1 : dims + 1]
    psi = psi[:, 1 : dims + 1]
    return Embedding(
        coords=psi * lam**op.steps,
        eigenvalues=lam,
        eigenvectors=psi,
        alpha=op.alpha,
        steps=op.steps,
        dataset_hash=op.dataset_hash,
    )


def diffusion_distance(op: DiffusionOperator, i: int, j: int) -> float:
    """Diffusion distance computed directly from rows of ``P^t``, weighted by ``1 / pi``."""
    rows = op.transition_rows([i, j])
    diff = rows[0] - rows[1]
    return float(np.sqrt(np.sum(diff * diff / op.stationary)))


# ============================================
# Latent-space utilities
# ============================================
def latent_walk_sample(
    emb: Embedding,
    i: int,
    scale: float,
    seed: int | np.random.Generator | None = None,
    k: int = 10,
) -> np.ndarray:
    """
    Gaussian step around ``coords[i]`` shaped by its latent neighbourhood.

    Raises:
        DegenerateCovarianceError: If fewer than 3 points define the covariance.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    count = min(k + 1, len(emb))
    if count < 3:
        raise DegenerateCovarianceError(
            f"need at least 3 latent neighbours, have {count}",
            details={"index": i, "neighbours": count},
        )
    _, idx = emb.tree.query(emb.coords[i], k=count)
    cov = np.atleast_2d(np.cov(emb.coords[idx].T))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.multivariate_normal(emb.coords[i], scale * cov, method="eigh")


@dataclass(frozen=True)
class SeparabilityReport:
    """k-NN label agreement of safe and colliding samples in latent space."""

    agreement: float
    safe_agreement: float
    colliding_agreement: float
    chance: float


def label_separability(emb: Embedding, labels: np.ndarray, k: int = 10) -> SeparabilityReport:
    """Mean fraction of each point's latent k-NN sharing its label, against the chance level."""
    labels = np.asarray(labels, dtype=bool)
    k = min(k, len(emb) - 1)
    _, idx = emb.tree.query(emb.coords, k=k + 1)
    same = (labels[idx[:, 1:]] == labels[:, None]).mean(axis=1)
    p = labels.mean()
    return SeparabilityReport(
        agreement=float(same.mean()),
        safe_agreement=float(same[~labels].mean()) if (~labels).any() else float("nan"),
        colliding_agreement=float(same[labels].mean()) if labels.any() else float("nan"),
        chance=float(p * p + (1 - p) * (1 - p)),
    )


def _knn_sets(points: np.ndarray, anchors: np.ndarray, k: int) -> list[set[int]]:
    _, idx = cKDTree(points).query(points[anchors], k=k + 1)
    return [set(int(j) for j in row if j != a) for a, row in zip(anchors, idx)]


def _mean_jaccard(a: list[set[int]], b: list[set[int]]) -> float:
    return float(np.mean([len(x & y) / len(x | y) for x, y in zip(a, b)]))


def neighborhood_preservation(
    features: np.ndarray,
    coords: np.ndarray,
    k: int = 10,
    n_anchors: int = 100,
    seed: int = 0,
) -> tuple[float, float]:
    """
    Mean Jaccard overlap of k-NN sets between feature space and latent space.

    Returns:
        ``(latent_score, random_projection_score)``; the baseline projects the
        features with a seeded Gaussian matrix to the same number of dimensions.
    """
    rng = np.random.default_rng(seed)
    n = len(features)
    anchors = rng.choice(n, size=min(n_anchors, n), replace=False)
    reference = _knn_sets(features, anchors, k)
    projection = features @ rng.normal(size=(features.shape[1], coords.shape[1]))
    return (
        _mean_jaccard(reference, _knn_sets(coords, anchors, k)),
        _mean_jaccard(reference, _knn_sets(projection, anchors, k)),
    )


class ConnectivityError(NumericalError):
    """Raised when the kernel graph is disconnected."""

    pass


class EigenSolverError(NumericalError):
    """Raised when the eigensolver does not converge."""

    pass


class DegenerateCovarianceError(NumericalError):
    """Raised when too few latent neighbours define a covariance."""

    pass
