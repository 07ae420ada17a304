"""Closed-loop interception runs and seeded batches."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from manifold_intercept.config import Settings, settings as default_settings
from manifold_intercept.domain.collision import capsules_clearance
from manifold_intercept.domain.dataset import Dataset, EeKdTree, nearest_ee
from manifold_intercept.domain.decoder import DecoderNet, interpolate_edge
from manifold_intercept.domain.entities import RunMetrics, ScenarioTrace, TraceRow
from manifold_intercept.domain.kinematics import end_effector_position, link_capsules_world
from manifold_intercept.domain.manifold import Embedding
from manifold_intercept.domain.planning import (
    NoPathError,
    PlanGraph,
    Route,
    edge_key,
    nearest_node_by_joints,
    relabel_blocked,
    reroute,
    shortest_routes,
    tube_candidates,
)
from manifold_intercept.domain.repository import IArtifactRepository
from manifold_intercept.domain.tracking import EkfTracker, InterceptPrediction
from manifold_intercept.domain.value_objects import (
    ArmModel,
    BallState,
    EventType,
    Scenario,
    ScenarioConfig,
)
from manifold_intercept.domain.world import NotVisibleError, obstacles_at, project, step_ball
from manifold_intercept.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class PipelineArtifacts:
    """Everything a run needs, index-aligned through the dataset."""

    model: ArmModel
    dataset: Dataset
    embedding: Embedding
    graph: PlanGraph
    decoder: DecoderNet | None = None

    def verify(self) -> None:
        """
        Check the dataset -> embedding -> graph/decoder hash chain.

        Raises:
            ArtifactMismatchError: If any link of the chain disagrees.
        """
        ds_hash = self.dataset.content_hash()
        emb_hash = self.embedding.content_hash()
        checks = [
            ("arm model", self.dataset.arm_model_hash, self.model.model_hash()),
            ("embedding", self.embedding.dataset_hash, ds_hash),
            ("graph dataset", self.graph.dataset_hash, ds_hash),
            ("graph embedding", self.graph.embedding_hash, emb_hash),
        ]
        if self.decoder is not None:
            checks.append(("decoder dataset", self.decoder.dataset_hash, ds_hash))
            checks.append(("decoder embedding", self.decoder.embedding_hash, emb_hash))
        for name, stored, actual in checks:
            if stored and stored != actual:
                raise ArtifactMismatchError(
                    f"{name} hash {stored[:12]} does not match {actual[:12]}"
                )
        if len(self.embedding) != len(self.dataset):
            raise ArtifactMismatchError(
                f"embedding has {len(self.embedding)} rows, dataset {len(self.dataset)}"
            )


def load_artifacts(repository: IArtifactRepository, cfg: ScenarioConfig) -> PipelineArtifacts:
    """Load and verify every artifact named by ``cfg``."""
    artifacts = PipelineArtifacts(
        model=repository.load_arm_model(cfg.arm_model_path),
        dataset=repository.load_dataset(cfg.dataset_path),
        embedding=repository.load_embedding(cfg.embedding_path),
        graph=repository.load_graph(cfg.graph_path),
        decoder=repository.load_decoder(cfg.decoder_path) if cfg.decoder_path else None,
    )
    artifacts.verify()
    return artifacts


@dataclass
class _RunState:
    """Mutable per-run bookkeeping owned by the runner loop."""

    q: np.ndarray
    node: int
    pending: list[int] = field(default_factory=list)
    route: Route | None = None
    target: int | None = None
    meet_time: float | None = None
    forecast: InterceptPrediction | None = None
    overlay: frozenset[int] = frozenset()
    failed_edges: set[tuple[int, int]] = field(default_factory=set)
    revision: int = 0
    halted: bool = False
    halted_overlay: frozenset[int] | None = None
    predicted_frame: int | None = None
    repredicted: bool = False
    unreachable_reported: bool = False
    triggered: bool = False
    entered_shell: bool = False
    route_lengths: list[int] = field(default_factory=list)
    reroutes: int = 0
    blocked_events: int = 0
    penetrations: int = 0
    min_clearance: float = math.inf
    best_distance: float = math.inf


class ScenarioRunner:
    """
    Orchestrates one closed-loop interception run.

    Per tick: trigger check, camera frame into the EKF, intercept (re-)prediction
    and routing, obstacle relabelling and rerouting, then one route edge executed
    in substeps with per-substep catch checks.

    The runner never modifies the shared artifacts: the blocked overlay, failed
    edges and route revisions live in the per-run state.
    """

    def __init__(self, artifacts: PipelineArtifacts, settings: Settings | None = None):
        """
        Initialize the runner.

        Args:
            artifacts: Verified pipeline artifacts.
            settings: Tunables; the process-wide settings when omitted.
        """
        self._a = artifacts
        self._settings = settings or default_settings
        self._tree = EeKdTree.from_dataset(artifacts.dataset, sorted(artifacts.graph.giant))
        radius = self._settings.relabel_tube_radius
        self._tube_radius = radius if radius > 0 else 2.0 * artifacts.graph.median_edge_weight()

    # ----------------------------------------
    # helpers
    # ----------------------------------------
    def _clearance(self, q: np.ndarray, obstacles) -> float:
        if not obstacles:
            return self._settings.clearance_sentinel
        return capsules_clearance(
            link_capsules_world(self._a.model, q), obstacles, self._settings.clearance_sentinel
        )

    def _target_node(self, point: np.ndarray, allowed) -> int:
        """Nearest node to ``point`` among ``allowed``, by end-effector position."""
        node, _ = nearest_ee(self._tree, point)
        if node in allowed:
            return node
        order = np.argsort(np.linalg.norm(self._tree.positions - point, axis=1), kind="stable")
        for i in order:
            candidate = int(self._tree.indices[i])
            if candidate in allowed:
                return candidate
        return node

    def _offset(self, st: _RunState) -> int:
        """One extra tick when the arm still has to settle onto its node."""
        return 0 if np.allclose(st.q, self._a.dataset.theta[st.node]) else 1

    def _select_route(self, st: _RunState, now: float, tick: float) -> tuple[Route, float | None]:
        """
        Route to the node that meets the forecast ball soonest and closest.

        A node is on time for a forecast sample when the route reaches it, one
        edge per tick, no later than the sample. Among on-time pairs the smallest
        end-effector distance wins, then fewer hops, then the lower index. When
        no node is on time the route goes to the reachable node nearest the
        intercept point.

        Returns:
            The route and the forecast time it meets (None for the fallback).

        Raises:
            NoPathError: If the current node is blocked.
        """
        routes = shortest_routes(
            self._a.graph,
            st.node,
            blocked=st.overlay,
            created_at=now,
            revision=st.revision + 1,
            blocked_edges=frozenset(st.failed_edges),
        )
        forecast = st.forecast
        nodes = np.array(sorted(routes), dtype=int)
        hops = np.array([len(routes[n]) - 1 for n in nodes]) + self._offset(st)
        if forecast.path_times.size:
            arrival = now + hops * tick
            dist = cdist(self._a.dataset.ee_position[nodes], forecast.path_points)
            dist[forecast.path_times[None, :] < arrival[:, None] - 1e-9] = np.inf
            cost = dist.min(axis=1)
            if np.isfinite(cost).any():
                best = int(np.lexsort((nodes, hops, cost))[0])
                meet = float(forecast.path_times[int(np.argmin(dist[best]))])
                return routes[int(nodes[best])], meet
        return routes[self._target_node(forecast.point, routes)], None

    def _adopt(self, st: _RunState, route: Route, meet: float | None, event, events: list) -> None:
        st.halted = False
        st.halted_overlay = None
        st.route = route
        st.revision = route.revision
        st.target = route.target
        st.meet_time = meet
        st.route_lengths.append(len(route))
        st.pending = list(route.nodes)
        if np.allclose(st.q, self._a.dataset.theta[route.nodes[0]]):
            st.pending = st.pending[1:]
        logger.debug(
            "Route revision %d to node %d: %d nodes, weight %.4f",
            route.revision,
            route.target,
            len(route),
            route.weight,
        )
        if event is not None:
            events.append(event)
            if event == EventType.REROUTE:
                st.reroutes += 1

    def _halt(self, st: _RunState, now: float, error: NoPathError, events: list) -> None:
        if not st.halted:
            logger.info("Route blocked at t=%.3f: %s; halting in place", now, error)
            events.append(EventType.BLOCKED)
            st.blocked_events += 1
        st.halted = True
        st.halted_overlay = st.overlay
        st.route = None
        st.pending = []

    def _plan(self, st: _RunState, now: float, tick: float, event, events: list) -> None:
        """Select a target within the time budget and route to it, or halt in place."""
        try:
            route, meet = self._select_route(st, now, tick)
        except NoPathError as e:
            self._halt(st, now, e, events)
            return
        self._adopt(st, route, meet, event, events)

    def _replan(self, st: _RunState, now: float, tick: float, events: list) -> None:
        """
        Obstacle-driven replan, recorded as REROUTE.

        The current target is kept while a detour still reaches it on time;
        otherwise a new target is selected.
        """
        if st.target is not None and st.meet_time is not None and st.target not in st.overlay:
            try:
                route = reroute(
                    self._a.graph,
                    st.node,
                    st.target,
                    blocked=st.overlay,
                    revision=st.revision,
                    created_at=now,
                    blocked_edges=frozenset(st.failed_edges),
                )
            except NoPathError:
                route = None
            if route is not None and now + (len(route) - 1 + self._offset(st)) * tick <= st.meet_time + 1e-9:
                self._adopt(st, route, st.meet_time, EventType.REROUTE, events)
                return
        self._plan(st, now, tick, EventType.REROUTE, events)

    def _edge_waypoints(self, st: _RunState, nxt: int, substeps: int, mode: str) -> np.ndarray:
        theta_b = self._a.dataset.theta[nxt]
        if mode == "decoder" and self._a.decoder is not None and st.node in self._a.graph:
            coords = self._a.graph.coords
            return interpolate_edge(
                self._a.decoder, coords[st.node], coords[nxt], st.q, theta_b, substeps
            )
        fractions = np.arange(1, substeps + 1)[:, None] / substeps
        return (1.0 - fractions) * st.q + fractions * theta_b

    def _edge_collides(self, waypoints: np.ndarray, scripts, now: float, sub_dt: float) -> bool:
        """Whether any waypoint touches the obstacles as they will be at its substep."""
        return any(
            self._clearance(w, obstacles_at(scripts, now + (j + 1) * sub_dt)) <= 0.0
            for j, w in enumerate(waypoints)
        )

    # ----------------------------------------
    # main loop
    # ----------------------------------------
    def run(self, cfg: ScenarioConfig) -> tuple[ScenarioTrace, RunMetrics]:
        """
        Execute one scenario until CATCH, MISS or timeout.

        Args:
            cfg: Scenario, timing and mode options.

        Returns:
            The per-tick trace and the run summary.

        Raises:
            ConfigError: If decoder interpolation is requested without a decoder.
        """
        if cfg.interpolation == "decoder" and self._a.decoder is None:
            raise ConfigError("decoder interpolation requires a decoder artifact")
        s = self._settings
        a = self._a
        scenario = cfg.scenario
        ds, g, model = a.dataset, a.graph, a.model

        rng = np.random.default_rng([scenario.noise_seed, cfg.seed])
        tracker = EkfTracker(
            scenario.camera,
            depth_channel=scenario.depth_channel,
            window=s.ekf_window,
            p0_diag=s.ekf_p0_diag,
            q_diag=s.ekf_q_diag,
            extrinsic_R=np.asarray(scenario.extrinsic_rotation),
            extrinsic_t=np.asarray(scenario.extrinsic_translation),
            min_depth=s.ekf_min_depth,
            pinv_tolerance=s.pinv_tolerance,
        )

        q0 = (
            np.asarray(scenario.start_joints, dtype=float)
            if scenario.start_joints is not None
            else ds.theta[nearest_node_by_joints(g, ds, model.limits.mean(axis=1))]
        )
        st = _RunState(q=q0, node=nearest_node_by_joints(g, ds, q0))
        ball = scenario.ball
        trace = ScenarioTrace(scenario=scenario.name, seed=cfg.seed)
        frame_period = 1.0 / scenario.camera.frame_rate
        next_frame = 0.0
        sub_dt = cfg.tick / cfg.substeps
        n_ticks = int(math.ceil(scenario.duration / cfg.tick - 1e-9))
        last_obs = None
        finished = False
        caught_at: float | None = None

        for k in range(n_ticks):
            now = k * cfg.tick
            events: list[EventType] = []
            ball_p = np.asarray(ball.position)

            # sensing
            if not st.triggered and np.linalg.norm(ball_p - np.asarray(scenario.trigger.center)) < scenario.trigger.radius:
                st.triggered = True
                events.append(EventType.TRIGGER)
                next_frame = now
                logger.info("Ball entered trigger sphere at t=%.3f", now)
            new_frame = False
            if st.triggered and now >= next_frame - 1e-9:
                next_frame += frame_period
                try:
                    last_obs = project(scenario.camera, ball_p, rng, timestamp=now)
                    tracker.observe(last_obs)
                    new_frame = True
                except NotVisibleError:
                    logger.debug("Ball not visible at t=%.3f", now)

            # intercept estimation
            if new_frame and tracker.ready:
                if st.predicted_frame is None:
                    self._estimate(st, tracker, cfg, now, EventType.PREDICT, events)
                elif not st.repredicted and tracker.frames - st.predicted_frame >= s.repredict_after_frames:
                    st.repredicted = True
                    self._estimate(st, tracker, cfg, now, EventType.REPREDICT, events)

            obstacles = obstacles_at(scenario.obstacles, now)

            # relabel and reroute against live obstacles
            if cfg.adaptive and st.forecast is not None:
                candidates = tube_candidates(g, [st.node, *st.pending], self._tube_radius, st.target)
                st.overlay = relabel_blocked(g, ds, model, obstacles, candidates, blocked=st.overlay)
                if st.halted:
                    if st.overlay != st.halted_overlay:
                        self._replan(st, now, cfg.tick, events)
                elif st.node in st.overlay or st.overlay.intersection(st.pending):
                    self._replan(st, now, cfg.tick, events)

            # execute one edge
            waypoints = None
            if st.pending:
                nxt = st.pending[0]
                waypoints = self._edge_waypoints(st, nxt, cfg.substeps, cfg.interpolation)
                if cfg.adaptive and scenario.obstacles and self._edge_collides(
                    waypoints, scenario.obstacles, now, sub_dt
                ):
                    waypoints = None
                    if nxt != st.node:
                        st.failed_edges.add(edge_key(st.node, nxt))
                        self._replan(st, now, cfg.tick, events)

            tick_clearance = math.inf
            for j in range(cfg.substeps):
                t_sub = now + (j + 1) * sub_dt
                ball = step_ball(ball, sub_dt, scenario.gravity)
                if waypoints is not None:
                    st.q = waypoints[j]
                live = obstacles_at(scenario.obstacles, t_sub)
                clearance = self._clearance(st.q, live)
                tick_clearance = min(tick_clearance, clearance)
                if live and clearance <= 0.0 and waypoints is not None:
                    st.penetrations += 1
                ee = end_effector_position(model, st.q)
                bp = np.asarray(ball.position)
                distance = float(np.linalg.norm(ee - bp))
                if st.triggered:
                    st.best_distance = min(st.best_distance, distance)
                if st.triggered and distance <= cfg.catch_tolerance:
                    events.append(EventType.CATCH)
                    caught_at = t_sub
                    finished = True
                    logger.info("CATCH at t=%.3f, error %.4f m", t_sub, distance)
                    break
                if scenario.reach.contains(bp):
                    st.entered_shell = True
                elif st.entered_shell or bp[2] - ball.radius <= scenario.floor_z:
                    events.append(EventType.MISS)
                    finished = True
                    logger.info("MISS at t=%.3f", t_sub)
                    break
            if waypoints is not None and not finished:
                st.node = st.pending.pop(0)
            st.min_clearance = min(st.min_clearance, tick_clearance)

            trace.rows.append(self._row(now + cfg.tick, ball, ee, last_obs, tracker, st, tick_clearance, events))
            if finished:
                break

        trace = ScenarioTrace.model_validate(trace.model_dump())
        caught = caught_at is not None
        metrics = RunMetrics(
            scenario=scenario.name,
            seed=cfg.seed,
            caught=caught,
            catch_error=st.best_distance,
            time_to_catch=caught_at,
            catch_tolerance=cfg.catch_tolerance,
            triggered=st.triggered,
            reroutes=st.reroutes,
            blocked=st.blocked_events,
            min_clearance=st.min_clearance,
            penetrations=st.penetrations,
            route_lengths=st.route_lengths,
        )
        return trace, metrics

    def _estimate(
        self,
        st: _RunState,
        tracker: EkfTracker,
        cfg: ScenarioConfig,
        now: float,
        event: EventType,
        events: list,
    ) -> None:
        s = self._settings
        scenario = cfg.scenario
        prediction = tracker.intercept(
            scenario.reach,
            s.intercept_horizon,
            gravity=scenario.gravity if s.ballistic_forecast else None,
            dt=cfg.tick / cfg.substeps,
            floor_z=scenario.floor_z,
        )
        if not prediction.reachable:
            if not st.unreachable_reported:
                events.append(EventType.UNREACHABLE)
                st.unreachable_reported = True
            return
        if st.predicted_frame is None:
            st.predicted_frame = tracker.frames
        st.forecast = prediction
        events.append(event)
        self._plan(st, now, cfg.tick, None, events)
        logger.info(
            "%s stage %d: intercept (%.3f, %.3f, %.3f) at t=%.3f -> node %s",
            event.value,
            prediction.stage,
            *prediction.point,
            prediction.time,
            st.target if st.route is not None else "none",
        )

    def _row(
        self,
        t: float,
        ball: BallState,
        ee: np.ndarray,
        obs,
        tracker: EkfTracker,
        st: _RunState,
        clearance: float,
        events: list[EventType],
    ) -> TraceRow:
        nan3 = (math.nan, math.nan, math.nan)
        state = tracker.state
        return TraceRow(
            time=t,
            ball=ball.position,
            observation=(obs.f_x, obs.f_y, obs.Z) if obs is not None else nan3,
            estimate=tuple(float(v) for v in state.x) if state is not None else nan3,
            covariance_diag=tuple(float(v) for v in np.diag(state.P)) if state is not None else nan3,
            stage=tracker.stage,
            route_revision=st.route.revision if st.route is not None else 0,
            joints=[float(v) for v in st.q],
            ee=tuple(float(v) for v in ee),
            min_clearance=clearance if math.isfinite(clearance) else self._settings.clearance_sentinel,
            events=list(events),
        )


def run_scenario(
    cfg: ScenarioConfig,
    artifacts: PipelineArtifacts,
    settings: Settings | None = None,
) -> tuple[ScenarioTrace, RunMetrics]:
    """Run one scenario against already-verified artifacts."""
    return ScenarioRunner(artifacts, settings).run(cfg)


# ============================================
# Batches
# ============================================
def jitter_scenario(scenario: Scenario, seed: int) -> Scenario:
    """Perturb the initial ball velocity with a seeded Gaussian of sigma ``throw_jitter``."""
    if scenario.throw_jitter <= 0.0:
        return scenario
    rng = np.random.default_rng(seed)
    v = np.asarray(scenario.ball.velocity) + rng.normal(0.0, scenario.throw_jitter, size=3)
    ball = scenario.ball.model_copy(update={"velocity": tuple(float(c) for c in v)})
    return scenario.model_copy(update={"ball": ball})


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class BatchReport:
    """Per-run metrics and their aggregate."""

    runs: list[RunMetrics]

    @property
    def catch_rate(self) -> float:
        return sum(r.caught for r in self.runs) / len(self.runs) if self.runs else 0.0

    @property
    def trigger_rate(self) -> float:
        return sum(r.triggered for r in self.runs) / len(self.runs) if self.runs else 0.0

    @property
    def catch_interval(self) -> tuple[float, float]:
        return wilson_interval(sum(r.caught for r in self.runs), len(self.runs))

    @property
    def mean_reroutes(self) -> float:
        return float(np.mean([r.reroutes for r in self.runs])) if self.runs else 0.0

    @property
    def min_clearance(self) -> float:
        return min((r.min_clearance for r in self.runs), default=math.inf)

    @property
    def penetrations(self) -> int:
        return sum(r.penetrations for r in self.runs)

    def summary(self) -> dict:
        lo, hi = self.catch_interval
        return {
            "runs": len(self.runs),
            "catch_rate": self.catch_rate,
            "catch_rate_lo": lo,
            "catch_rate_hi": hi,
            "trigger_rate": self.trigger_rate,
            "mean_reroutes": self.mean_reroutes,
            "min_clearance": self.min_clearance,
            "penetrations": self.penetrations,
        }


def _run_job(
    repository: IArtifactRepository,
    settings: Settings | None,
    cfg: ScenarioConfig,
) -> tuple[ScenarioTrace, RunMetrics]:
    return run_scenario(cfg, load_artifacts(repository, cfg), settings)


def batch_run(
    cfgs: list[ScenarioConfig],
    seeds: list[int],
    repository: IArtifactRepository,
    settings: Settings | None = None,
    workers: int = 1,
    traces: list | None = None,
) -> BatchReport:
    """
    Run every (config, seed) pair independently.

    Each seed jitters the throw and seeds the sensor noise; results are ordered
    by config then seed regardless of ``workers``.

    Args:
        cfgs: Scenario configurations.
        seeds: Seeds applied to each configuration.
        repository: Artifact source.
        settings: Tunables shared by every run.
        workers: Process count; 1 runs inline and reuses loaded artifacts.
        traces: Optional list receiving each run's trace in the same order.

    Returns:
        BatchReport over all runs.
    """
    jobs = [
        cfg.model_copy(update={"seed": seed, "scenario": jitter_scenario(cfg.scenario, seed)})
        for cfg in cfgs
        for seed in seeds
    ]
    if workers <= 1:
        cache: dict[tuple, PipelineArtifacts] = {}
        results = []
        for job in jobs:
            key = (job.dataset_path, job.embedding_path, job.graph_path, job.decoder_path, job.arm_model_path)
            if key not in cache:
                cache[key] = load_artifacts(repository, job)
            results.append(run_scenario(job, cache[key], settings))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_job, repository, settings, job) for job in jobs]
            results = [f.result() for f in futures]

    if traces is not None:
        traces.extend(trace for trace, _ in results)
    report = BatchReport(runs=[metrics for _, metrics in results])
    lo, hi = report.catch_interval
    logger.info(
        "Batch of %d runs: catch rate %.3f [%.3f, %.3f], mean reroutes %.2f",
        len(jobs),
        report.catch_rate,
        lo,
        hi,
        report.mean_reroutes,
    )
    return report


class ArtifactMismatchError(ConfigError):
    """Raised when artifacts do not share a hash chain."""

    pass
