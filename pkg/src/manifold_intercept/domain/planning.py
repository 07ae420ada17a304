"""kNN routing graph over safe latent nodes with a blocked-node overlay."""

import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from manifold_intercept.domain.collision import ConvexShape, capsules_clearance
from manifold_intercept.domain.dataset import Dataset
from manifold_intercept.domain.kinematics import link_capsules_world
from manifold_intercept.domain.manifold import Embedding
from manifold_intercept.domain.value_objects import ArmModel
from manifold_intercept.errors import InterceptError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Route:
    """Node sequence from source to target."""

    nodes: tuple[int, ...]
    weight: float
    created_at: float = 0.0
    revision: int = 0

    @property
    def source(self) -> int:
        return self.nodes[0]

    @property
    def target(self) -> int:
        return self.nodes[-1]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class PlanGraph:
    """
    Undirected adjacency map over safe sample indices.

    The graph is immutable after build and safe to share between runs and
    threads. ``blocked`` is the default overlay (empty for a built graph);
    ``with_blocked`` returns a copy, and runs keep their own overlay and pass
    it to the routing functions.
    """

    adjacency: dict[int, dict[int, float]]
    coords: dict[int, np.ndarray]
    giant: frozenset[int]
    k: int
    dataset_hash: str = ""
    embedding_hash: str = ""
    blocked: frozenset[int] = field(default_factory=frozenset)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.adjacency)

    def __contains__(self, node: int) -> bool:
        return node in self.adjacency

    def __len__(self) -> int:
        return len(self.adjacency)

    @cached_property
    def _node_array(self) -> np.ndarray:
        return np.array(self.nodes, dtype=int)

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(np.array([self.coords[n] for n in self._node_array]))

    def nodes_within(self, point: np.ndarray, radius: float) -> set[int]:
        """Graph nodes within a latent radius of ``point``."""
        return {int(self._node_array[i]) for i in self._tree.query_ball_point(point, r=radius)}

    def median_edge_weight(self) -> float:
        weights = [w for nbrs in self.adjacency.values() for w in nbrs.values()]
        return float(np.median(weights)) if weights else 0.0

    def with_blocked(self, blocked) -> "PlanGraph":
        """Copy of the graph carrying ``blocked`` as its default overlay."""
        return replace(self, blocked=frozenset(int(b) for b in blocked))

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for node in self.nodes:
            nbrs = self.adjacency[node]
            digest.update(
                json.dumps([node, sorted(nbrs), [nbrs[j] for j in sorted(nbrs)]]).encode()
            )
        digest.update(f"{self.k}|{self.dataset_hash}|{self.embedding_hash}".encode())
        return digest.hexdigest()


def build_graph(emb: Embedding, ds: Dataset, k: int = 8) -> PlanGraph:
    """
    kNN graph over collision-free samples, symmetrised by union.

    Args:
        emb: Latent coordinates, index-aligned with ``ds``.
        ds: Dataset supplying the safe flags.
        k: Neighbours per node, at least 1. After union symmetrisation k=1 already
            links every node to its nearest neighbour.

    Returns:
        PlanGraph whose edge weights are latent Euclidean distances.

    Raises:
        GraphBuildError: If k < 1 or fewer than two safe nodes exist; also on
            misaligned inputs.
    """
    if k < 1:
        raise GraphBuildError(f"k must be >= 1, got {k}")
    if len(emb) != len(ds):
        raise GraphBuildError(f"embedding has {len(emb)} rows, dataset {len(ds)}")
    safe = ds.safe_indices
    if len(safe) < 2:
        raise GraphBuildError(f"need at least 2 safe nodes, found {len(safe)}")

    points = emb.coords[safe]
    kq = min(k + 1, len(safe))
    _, idx = cKDTree(points).query(points, k=kq)
    adjacency: dict[int, dict[int, float]] = {int(n): {} for n in safe}
    for a, row in enumerate(idx):
        for b in row:
            if a == b:
                continue
            i, j = int(safe[a]), int(safe[b])
            w = float(np.linalg.norm(emb.coords[i] - emb.coords[j]))
            adjacency[i][j] = w
            adjacency[j][i] = w

    # connectivity on local positions
    rows = [a for a, row in enumerate(idx) for b in row if a != b]
    cols = [int(b) for a, row in enumerate(idx) for b in row if a != b]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(safe), len(safe)))
    n_components, labels = connected_components(graph, directed=False)
    largest = int(np.argmax(np.bincount(labels)))
    giant = frozenset(int(safe[a]) for a in np.flatnonzero(labels == largest))
    if n_components > 1:
        logger.warning(
            "Routing graph has %d components; %d of %d nodes lie outside the giant component",
            n_components,
            len(safe) - len(giant),
            len(safe),
        )
    logger.info("Built routing graph: %d safe nodes, k=%d", len(safe), k)
    return PlanGraph(
        adjacency=adjacency,
        coords={int(n): emb.coords[n].copy() for n in safe},
        giant=giant,
        k=k,
        dataset_hash=ds.content_hash(),
        embedding_hash=emb.content_hash(),
    )


def edge_key(a: int, b: int) -> tuple[int, int]:
    """Order-free key of an undirected edge."""
    return (a, b) if a <= b else (b, a)


def _settle(g: PlanGraph, src: int, blocked: frozenset[int], blocked_edges: frozenset):
    """
    Yield ``(node, distance, path)`` in Dijkstra settle order.

    Equal-weight paths resolve to the lexicographically smallest node sequence:
    the heap is keyed on ``(distance, path)``.
    """
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (src,))]
    settled: set[int] = set()
    best: dict[int, float] = {src: 0.0}
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        yield node, dist, path
        for nbr, w in g.adjacency[node].items():
            if nbr in settled or nbr in blocked:
                continue
            if blocked_edges and edge_key(node, nbr) in blocked_edges:
                continue
            nd = dist + w
            if nd <= best.get(nbr, np.inf):
                best[nbr] = nd
                heapq.heappush(heap, (nd, path + (nbr,)))


def _check_endpoint(g: PlanGraph, node: int, blocked: frozenset[int]) -> None:
    if node not in g:
        raise NoPathError(f"node {node} is not in the graph", blocked_count=len(blocked))
    if node in blocked:
        raise NoPathError(f"node {node} is blocked", blocked_count=len(blocked))


def shortest_path(
    g: PlanGraph,
    src: int,
    dst: int,
    blocked: frozenset[int] | None = None,
    created_at: float = 0.0,
    revision: int = 0,
    blocked_edges: frozenset[tuple[int, int]] = frozenset(),
) -> Route:
    """
    Dijkstra over unblocked nodes and edges.

    Args:
        g: Routing graph.
        src: Source node.
        dst: Destination node.
        blocked: Overlay to avoid; the graph's own overlay when omitted.
        created_at: Timestamp stamped on the route.
        revision: Revision stamped on the route.
        blocked_edges: Edges (as ``edge_key`` pairs) to avoid.

    Raises:
        NoPathError: If an endpoint is unknown or blocked, or ``dst`` is unreachable.
    """
    blocked = g.blocked if blocked is None else frozenset(blocked)
    for end in (src, dst):
        _check_endpoint(g, end, blocked)
    for node, dist, path in _settle(g, src, blocked, frozenset(blocked_edges)):
        if node == dst:
            return Route(nodes=path, weight=dist, created_at=created_at, revision=revision)
    raise NoPathError(
        f"no path from {src} to {dst} with {len(blocked)} blocked nodes",
        blocked_count=len(blocked),
    )


def shortest_routes(
    g: PlanGraph,
    src: int,
    blocked: frozenset[int] | None = None,
    created_at: float = 0.0,
    revision: int = 0,
    blocked_edges: frozenset[tuple[int, int]] = frozenset(),
) -> dict[int, Route]:
    """
    Single-source Dijkstra: the shortest route from ``src`` to every reachable node.

    Each route equals what ``shortest_path`` returns for that destination.

    Raises:
        NoPathError: If ``src`` is unknown or blocked.
    """
    blocked = g.blocked if blocked is None else frozenset(blocked)
    _check_endpoint(g, src, blocked)
    return {
        node: Route(nodes=path, weight=dist, created_at=created_at, revision=revision)
        for node, dist, path in _settle(g, src, blocked, frozenset(blocked_edges))
    }


def node_blocked(model: ArmModel, theta: np.ndarray, obstacles: list[ConvexShape]) -> bool:
    """Whether the arm posed at ``theta`` touches any obstacle (margins included)."""
    return capsules_clearance(link_capsules_world(model, theta), obstacles) <= 0.0


def relabel_blocked(
    g: PlanGraph,
    ds: Dataset,
    model: ArmModel,
    obstacles: list[ConvexShape],
    candidates,
    blocked: frozenset[int] | None = None,
) -> frozenset[int]:
    """
    Re-check candidate nodes against live obstacles.

    Marks for re-checked nodes are replaced; other marks of ``blocked`` (the
    graph's overlay when omitted) are kept. Neither the graph nor ``blocked``
    is modified.

    Returns:
        The new overlay snapshot.
    """
    current = g.blocked if blocked is None else frozenset(blocked)
    candidates = {int(c) for c in candidates if c in g}
    keep = current - candidates
    if not obstacles:
        return frozenset(keep)
    hits = {c for c in candidates if node_blocked(model, ds.theta[c], obstacles)}
    return frozenset(keep | hits)


def reroute(
    g: PlanGraph,
    current: int,
    dst: int,
    blocked: frozenset[int] | None = None,
    revision: int = 0,
    created_at: float = 0.0,
    blocked_edges: frozenset[tuple[int, int]] = frozenset(),
) -> Route:
    """
    Shortest path avoiding the overlay, stamped with the next route revision.

    Args:
        revision: Revision of the route being replaced; the result carries ``revision + 1``.

    Raises:
        NoPathError: If the overlay disconnects ``current`` from ``dst``.
    """
    blocked = g.blocked if blocked is None else frozenset(blocked)
    route = shortest_path(
        g, current, dst, blocked, created_at=created_at, revision=revision + 1, blocked_edges=blocked_edges
    )
    logger.info(
        "Route revision %d: %d nodes, weight %.4f, %d blocked",
        route.revision,
        len(route),
        route.weight,
        len(blocked),
    )
    return route


def tube_candidates(
    g: PlanGraph,
    nodes,
    radius: float,
    target: int | None = None,
) -> set[int]:
    """Nodes within ``radius`` of any listed node, plus the target and its neighbours."""
    out: set[int] = set()
    for n in nodes:
        out |= g.nodes_within(g.coords[n], radius)
    if target is not None and target in g:
        out.add(target)
        out |= set(g.adjacency[target])
    return out


def nearest_node_by_joints(g: PlanGraph, ds: Dataset, q: np.ndarray, routable_only: bool = True) -> int:
    """Graph node whose stored joints are closest to ``q``; ties go to the lowest index."""
    pool = np.array(sorted(g.giant if routable_only else g.adjacency), dtype=int)
    dists = np.linalg.norm(ds.theta[pool] - np.asarray(q), axis=1)
    return int(pool[int(np.argmin(dists))])


def route_is_valid(g: PlanGraph, route: Route, blocked: frozenset[int] | None = None) -> bool:
    """Consecutive nodes adjacent and no node in the overlay."""
    blocked = g.blocked if blocked is None else blocked
    if any(n not in g or n in blocked for n in route.nodes):
        return False
    return all(b in g.adjacency[a] for a, b in zip(route.nodes, route.nodes[1:]))


class GraphBuildError(InterceptError):
    """Raised when the routing graph cannot be built."""

    pass


class NoPathError(InterceptError):
    """Raised when no unblocked path connects two nodes."""

    def __init__(self, message: str, blocked_count: int = 0):
        super().__init__(message)
        self.blocked_count = blocked_count
