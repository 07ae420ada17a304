"""Tests for the closed-loop scenario runner and seeded batches."""

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from manifold_intercept.domain.kinematics import end_effector_position
from manifold_intercept.domain.planning import NoPathError, edge_key, node_blocked, shortest_path, shortest_routes
from manifold_intercept.domain.services import (
    ArtifactMismatchError,
    ScenarioRunner,
    batch_run,
    jitter_scenario,
    load_artifacts,
    run_scenario,
    wilson_interval,
)
from manifold_intercept.domain.value_objects import (
    CameraModel,
    EventType,
    ObstacleScript,
    ObstacleShape,
    ReachShell,
    TriggerSphere,
    Waypoint,
)
from manifold_intercept.domain.world import obstacles_at
from manifold_intercept.errors import ConfigError
from manifold_intercept.infrastructure.storage.codecs import dump_trace


def _far_from_line(artifacts, a, b) -> int:
    """Routable node whose end effector lies furthest from segment ``a``-``b``."""
    a, b = np.asarray(a), np.asarray(b)
    best, best_d = None, -1.0
    for node in sorted(artifacts.graph.giant):
        p = artifacts.dataset.ee_position[node]
        if p[2] < 0.2:
            continue
        s = np.clip((p - a) @ (b - a) / ((b - a) @ (b - a)), 0.0, 1.0)
        d = float(np.linalg.norm(p - (a + s * (b - a))))
        if d > best_d:
            best, best_d = node, d
    return best


def _hop_target(artifacts, start: int, min_hops: int = 2, max_hops: int = 4):
    """Node a few edges from ``start`` whose hand sits high and clear of the start hand, with its route."""
    ee = artifacts.dataset.ee_position
    routes = shortest_routes(artifacts.graph, start)
    for node in sorted(routes):
        hops = len(routes[node]) - 1
        if min_hops <= hops <= max_hops and ee[node][2] > 0.3 and np.linalg.norm(ee[node] - ee[start]) > 0.3:
            return node, routes[node]
    pytest.skip("fixture graph has no node a few edges away with a distinct hand position")


def _crossing(make_scenario, artifacts, start: int, target: int, speed: float = 2.0, meet: float = 0.6, **kwargs):
    """Level ball passing through ``target``'s hand at ``meet`` seconds, square to the start hand."""
    ee = artifacts.dataset.ee_position
    direction = np.cross(ee[start] - ee[target], (0.0, 0.0, 1.0))
    if np.linalg.norm(direction) < 1e-9:
        direction = np.array([1.0, 0.0, 0.0])
    direction = direction / np.linalg.norm(direction)
    hand = tuple(float(c) for c in ee[target])
    return make_scenario(
        [float(c) for c in ee[target] - direction * speed * meet],
        [float(c) for c in direction * speed],
        name=kwargs.pop("name", "crossing"),
        duration=1.0,
        trigger=TriggerSphere(center=hand, radius=3.0),
        reach=ReachShell(center=hand, inner_radius=0.0, outer_radius=1.0),
        start_joints=[float(v) for v in artifacts.dataset.theta[start]],
        **kwargs,
    )


def _sphere_script(centre, sliding: bool = False) -> ObstacleScript:
    """Small sphere resting at ``centre``; a sliding one drops in from 1.5 m above by t=0.1 s."""
    waypoints = [Waypoint(time=0.0, position=centre)]
    if sliding:
        above = (centre[0], centre[1], centre[2] + 1.5)
        waypoints = [Waypoint(time=0.0, position=above), Waypoint(time=0.1, position=centre)]
    return ObstacleScript(name="post", shape=ObstacleShape(radius=0.06), waypoints=waypoints)


def _route_blocker(artifacts, start: int, max_hops: int = 6):
    """
    Target, an interior node of the route to it and a sphere centre on that node's hand.

    The sphere touches the interior pose but neither end pose, and a detour around
    every pose it touches still exists.
    """
    g, ds, model = artifacts.graph, artifacts.dataset, artifacts.model
    routes = shortest_routes(g, start)
    for target in sorted(routes):
        route = routes[target]
        if not 2 <= len(route) - 1 <= max_hops or ds.ee_position[target][2] <= 0.3:
            continue
        if np.linalg.norm(ds.ee_position[target] - ds.ee_position[start]) <= 0.3:
            continue
        for middle in route.nodes[1:-1]:
            centre = tuple(float(c) for c in ds.ee_position[middle])
            shapes = obstacles_at([_sphere_script(centre)], 0.0)
            touched = frozenset(n for n in routes if node_blocked(model, ds.theta[n], shapes))
            if middle not in touched or start in touched or target in touched:
                continue
            try:
                shortest_path(g, start, target, blocked=touched)
            except NoPathError:
                continue
            return target, middle, centre
    pytest.skip("fixture graph has no route with a detour around one of its poses")


@pytest.fixture
def adopted_reroutes(monkeypatch):
    """Snapshot of overlay, failed edges, node and remaining route after every adopted REROUTE."""
    seen = []
    adopt = ScenarioRunner._adopt

    def _record(self, st, route, meet, event, events):
        adopt(self, st, route, meet, event, events)
        if event == EventType.REROUTE:
            seen.append((st.overlay, frozenset(st.failed_edges), st.node, list(st.pending)))

    monkeypatch.setattr(ScenarioRunner, "_adopt", _record)
    return seen


@pytest.fixture
def blocked_scenario(make_scenario, artifacts):
    """Ball crossing the workspace while a huge static sphere swallows the arm."""
    start = _far_from_line(artifacts, (1.2, 0.0, 0.6), (0.2, 0.0, 0.6))
    wall = ObstacleScript(
        name="wall",
        shape=ObstacleShape(radius=2.0),
        waypoints=[Waypoint(time=0.0, position=(0.0, 0.0, 0.4))],
    )
    return make_scenario(
        (1.2, 0.0, 0.6),
        (-2.0, 0.0, 0.0),
        name="blocked",
        obstacles=[wall],
        start_joints=[float(v) for v in artifacts.dataset.theta[start]],
    )


@pytest.fixture
def departing_scenario(make_scenario):
    """Ball flying away from the reach shell along +x."""
    return make_scenario((1.2, 0.0, 0.4), (2.0, 0.0, 0.0), name="departing")


class TestPipelineArtifacts:
    """Tests for artifact verification."""

    def test_fixture_bundle_verifies(self, artifacts):
        """Test freshly built artifacts form a consistent chain."""
        artifacts.verify()

    def test_graph_hash_mismatch(self, artifacts):
        """Test a graph from another dataset is refused."""
        bad = dataclasses.replace(artifacts, graph=dataclasses.replace(artifacts.graph, dataset_hash="0" * 64))
        with pytest.raises(ArtifactMismatchError, match="graph dataset"):
            bad.verify()

    def test_decoder_hash_mismatch(self, artifacts):
        """Test a decoder trained on other coordinates is refused."""
        decoder = artifacts.decoder
        original = decoder.embedding_hash
        decoder.embedding_hash = "f" * 64
        try:
            with pytest.raises(ArtifactMismatchError, match="decoder embedding"):
                artifacts.verify()
        finally:
            decoder.embedding_hash = original

    def test_load_artifacts_through_repository(self, memory_repository, make_config, easy_scenario):
        """Test loading verifies and returns the repository's bundle."""
        bundle = load_artifacts(memory_repository, make_config(easy_scenario))
        assert bundle.decoder is not None
        assert len(bundle.dataset) == len(bundle.embedding)


class TestScenarioRunner:
    """Tests for single closed-loop runs."""

    def test_easy_catch(self, artifacts, make_config, easy_scenario, test_settings):
        """Test a ball dropped onto the resting hand is caught in the first tick."""
        trace, metrics = run_scenario(make_config(easy_scenario), artifacts, test_settings)
        assert metrics.caught
        assert metrics.catch_error <= 0.10
        assert metrics.time_to_catch <= 1.0 / 30.0 + 1e-9
        assert [e for _, e in trace.events()] == [EventType.TRIGGER, EventType.CATCH]
        assert len(trace.rows) == 1

    def test_no_trigger_no_events(self, artifacts, make_config, make_scenario, test_settings):
        """Test a ball that never enters the trigger sphere leaves the arm idle."""
        scenario = make_scenario((0.0, 0.0, 3.0), (0.0, 0.0, 1.0), name="idle")
        trace, metrics = run_scenario(make_config(scenario), artifacts, test_settings)
        assert trace.events() == []
        assert not metrics.triggered and not metrics.caught
        assert len(trace.rows) == 15
        assert all(np.isnan(row.estimate[0]) for row in trace.rows)
        assert metrics.min_clearance == test_settings.clearance_sentinel

    def test_unreachable_ball(self, artifacts, make_config, departing_scenario, test_settings):
        """Test a departing ball is reported unreachable once and never caught."""
        trace, metrics = run_scenario(make_config(departing_scenario), artifacts, test_settings)
        assert trace.count(EventType.TRIGGER) == 1
        assert trace.count(EventType.UNREACHABLE) == 1
        assert trace.count(EventType.PREDICT) == 0
        assert not metrics.caught
        assert metrics.route_lengths == []

    def test_blocked_route_halts_in_place(self, artifacts, make_config, blocked_scenario, test_settings):
        """Test an obstacle covering every node halts the arm without penetration."""
        trace, metrics = run_scenario(make_config(blocked_scenario), artifacts, test_settings)
        assert trace.count(EventType.PREDICT) == 1
        assert trace.count(EventType.BLOCKED) == 1
        assert metrics.blocked == 1
        assert metrics.penetrations == 0
        assert metrics.min_clearance == 0.0
        start = np.asarray(blocked_scenario.start_joints)
        for row in trace.rows:
            np.testing.assert_array_equal(row.joints, start)
        assert not metrics.caught

    def test_non_adaptive_never_reroutes(self, artifacts, make_config, blocked_scenario, test_settings):
        """Test disabling adaptation skips relabelling and rerouting."""
        trace, metrics = run_scenario(
            make_config(blocked_scenario, adaptive=False), artifacts, test_settings
        )
        assert metrics.reroutes == 0
        assert trace.count(EventType.REROUTE) == 0
        assert trace.count(EventType.BLOCKED) == 0
        assert trace.count(EventType.PREDICT) == 1

    def test_runs_are_deterministic(self, artifacts, make_config, departing_scenario, test_settings):
        """Test equal seeds give identical traces under sensor noise."""
        noisy = departing_scenario.model_copy(
            update={"camera": CameraModel(focal_length=500.0, pixel_noise_sigma=0.5, depth_noise_sigma=0.005)}
        )
        first, _ = run_scenario(make_config(noisy, seed=3), artifacts, test_settings)
        second, _ = run_scenario(make_config(noisy, seed=3), artifacts, test_settings)
        other, _ = run_scenario(make_config(noisy, seed=4), artifacts, test_settings)
        assert dump_trace(first) == dump_trace(second)
        assert dump_trace(first) != dump_trace(other)

    def test_route_revision_resets_between_runs(self, artifacts, make_config, blocked_scenario, test_settings):
        """Test every run starts counting route revisions from zero."""
        first, _ = run_scenario(make_config(blocked_scenario), artifacts, test_settings)
        second, _ = run_scenario(make_config(blocked_scenario), artifacts, test_settings)
        assert [r.route_revision for r in first.rows] == [r.route_revision for r in second.rows]

    def test_decoder_mode_needs_decoder(self, artifacts, make_config, easy_scenario, test_settings):
        """Test decoder interpolation without a decoder is a configuration error."""
        bare = dataclasses.replace(artifacts, decoder=None)
        with pytest.raises(ConfigError, match="decoder"):
            run_scenario(make_config(easy_scenario, interpolation="decoder"), bare, test_settings)

    def test_decoder_mode_runs(self, artifacts, make_config, easy_scenario, test_settings):
        """Test decoder interpolation completes the easy catch."""
        _, metrics = run_scenario(make_config(easy_scenario, interpolation="decoder"), artifacts, test_settings)
        assert metrics.caught

    def test_rows_track_the_hand(self, artifacts, make_config, make_scenario, test_settings, start_node):
        """Test each row's end effector matches its joints."""
        scenario = make_scenario(
            (0.0, 0.0, 3.0),
            (0.0, 0.0, 1.0),
            start_joints=[float(v) for v in artifacts.dataset.theta[start_node]],
        )
        trace, _ = run_scenario(make_config(scenario), artifacts, test_settings)
        row = trace.rows[-1]
        np.testing.assert_allclose(row.ee, end_effector_position(artifacts.model, np.asarray(row.joints)))

    def test_multi_edge_route_catches(self, artifacts, make_config, make_scenario, test_settings, start_node):
        """Test a crossing ball is met at a node several edges away without any reroute."""
        target, route = _hop_target(artifacts, start_node)
        scenario = _crossing(make_scenario, artifacts, start_node, target)
        trace, metrics = run_scenario(make_config(scenario), artifacts, test_settings)
        events = [e for _, e in trace.events()]
        assert metrics.caught
        assert events[0] == EventType.TRIGGER and events[-1] == EventType.CATCH
        assert EventType.PREDICT in events
        assert metrics.route_lengths[0] == len(route) >= 3
        assert metrics.reroutes == 0 and trace.count(EventType.REROUTE) == 0
        assert metrics.time_to_catch <= 0.6
        np.testing.assert_allclose(trace.rows[-1].joints, artifacts.dataset.theta[target])

    @pytest.mark.parametrize("sliding", [False, True], ids=["static", "sliding"])
    def test_obstacle_on_route_forces_fresh_reroute(
        self, artifacts, make_config, make_scenario, test_settings, start_node, adopted_reroutes, sliding
    ):
        """Test a sphere on the planned route triggers a REROUTE onto clear nodes and edges."""
        target, middle, centre = _route_blocker(artifacts, start_node)
        scenario = _crossing(
            make_scenario, artifacts, start_node, target, obstacles=[_sphere_script(centre, sliding)]
        )
        trace, metrics = run_scenario(make_config(scenario), artifacts, test_settings)
        times = {e: t for t, e in reversed(trace.events())}
        assert trace.count(EventType.PREDICT) == 1
        assert trace.count(EventType.REROUTE) >= 1
        assert times[EventType.REROUTE] == times[EventType.PREDICT]
        assert metrics.reroutes == trace.count(EventType.REROUTE)
        assert trace.count(EventType.BLOCKED) == 0
        assert metrics.penetrations == 0

        assert len(adopted_reroutes) == metrics.reroutes
        assert middle in adopted_reroutes[0][0]
        for overlay, failed, node, pending in adopted_reroutes:
            assert node not in overlay
            assert not overlay.intersection(pending)
            assert not any(edge_key(a, b) in failed for a, b in zip([node, *pending], pending))

    def test_same_obstacle_is_hit_without_adaptation(
        self, artifacts, make_config, make_scenario, test_settings, start_node
    ):
        """Test the non-adaptive arm drives through the sphere on its route."""
        target, _, centre = _route_blocker(artifacts, start_node)
        scenario = _crossing(make_scenario, artifacts, start_node, target, obstacles=[_sphere_script(centre)])
        trace, metrics = run_scenario(make_config(scenario, adaptive=False), artifacts, test_settings)
        assert trace.count(EventType.REROUTE) == 0
        assert metrics.penetrations >= 1
        assert metrics.min_clearance <= 0.0

    def test_shared_graph_is_untouched(self, artifacts, make_config, make_scenario, test_settings, start_node):
        """Test runs on one graph, in sequence or concurrently, agree and leave it unchanged."""
        graph = artifacts.graph
        before = graph.content_hash()
        target, _, centre = _route_blocker(artifacts, start_node)
        cfg = make_config(
            _crossing(make_scenario, artifacts, start_node, target, obstacles=[_sphere_script(centre)])
        )
        sequential = [dump_trace(run_scenario(cfg, artifacts, test_settings)[0]) for _ in range(2)]
        with ThreadPoolExecutor(max_workers=2) as pool:
            concurrent = [dump_trace(t) for t, _ in pool.map(lambda _: run_scenario(cfg, artifacts, test_settings), range(2))]
        assert sequential[0] == sequential[1] == concurrent[0] == concurrent[1]
        assert graph.blocked == frozenset()
        assert graph.content_hash() == before

    def test_edge_check_uses_substep_obstacle_positions(self, artifacts, test_settings, start_node):
        """Test the edge check sees obstacles where they are at each substep, not at the tick start."""
        runner = ScenarioRunner(artifacts, test_settings)
        waypoints = np.repeat(artifacts.dataset.theta[start_node][None, :], 4, axis=0)
        wall, far = (0.0, 0.0, 0.4), (10.0, 10.0, 10.0)
        shape = ObstacleShape(radius=2.0)
        leaving = ObstacleScript(
            name="leaving", shape=shape, waypoints=[Waypoint(time=0.0, position=wall), Waypoint(time=0.001, position=far)]
        )
        arriving = ObstacleScript(
            name="arriving", shape=shape, waypoints=[Waypoint(time=0.0, position=far), Waypoint(time=0.005, position=wall)]
        )
        assert not runner._edge_collides(waypoints, [leaving], 0.0, 1.0 / 120.0)
        assert runner._edge_collides(waypoints, [arriving], 0.0, 1.0 / 120.0)


class TestBatch:
    """Tests for seeded batches and their statistics."""

    def test_wilson_interval(self):
        """Test known Wilson bounds and the empty case."""
        lo, hi = wilson_interval(5, 10)
        assert lo == pytest.approx(0.2366, abs=1e-4)
        assert hi == pytest.approx(0.7634, abs=1e-4)
        assert wilson_interval(0, 0) == (0.0, 1.0)
        assert wilson_interval(3, 3)[1] == 1.0

    def test_jitter_is_seeded(self, easy_scenario):
        """Test jitter reproduces per seed and is a no-op at zero sigma."""
        assert jitter_scenario(easy_scenario, 1) is easy_scenario
        shaky = easy_scenario.model_copy(update={"throw_jitter": 0.1})
        a, b, c = jitter_scenario(shaky, 1), jitter_scenario(shaky, 1), jitter_scenario(shaky, 2)
        assert a.ball.velocity == b.ball.velocity
        assert a.ball.velocity != c.ball.velocity
        assert a.ball.position == shaky.ball.position

    def test_batch_of_easy_catches(self, memory_repository, make_config, easy_scenario, test_settings):
        """Test every seed of the easy drop is caught and traces line up."""
        traces: list = []
        report = batch_run([make_config(easy_scenario)], [1, 2, 3], memory_repository, test_settings, traces=traces)
        summary = report.summary()
        assert summary["runs"] == 3
        assert summary["catch_rate"] == 1.0
        assert summary["trigger_rate"] == 1.0
        assert summary["catch_rate_hi"] == 1.0
        assert summary["catch_rate_lo"] == pytest.approx(wilson_interval(3, 3)[0])
        assert summary["penetrations"] == 0
        assert [r.seed for r in report.runs] == [1, 2, 3]
        assert [t.seed for t in traces] == [1, 2, 3]

    def test_batch_is_deterministic(self, memory_repository, make_config, departing_scenario, test_settings):
        """Test repeating a jittered batch reproduces every run."""
        scenario = departing_scenario.model_copy(update={"throw_jitter": 0.2})
        cfgs = [make_config(scenario)]
        first = batch_run(cfgs, [5, 6], memory_repository, test_settings)
        second = batch_run(cfgs, [5, 6], memory_repository, test_settings)
        assert [r.model_dump() for r in first.runs] == [r.model_dump() for r in second.runs]

    def test_jittered_crossings_are_mostly_caught(
        self, memory_repository, make_config, make_scenario, artifacts, test_settings, start_node
    ):
        """Test a feasible crossing with seeded throw jitter is caught in at least 80% of runs."""
        target, _ = _hop_target(artifacts, start_node)
        scenario = _crossing(make_scenario, artifacts, start_node, target).model_copy(update={"throw_jitter": 0.05})
        report = batch_run([make_config(scenario)], list(range(10)), memory_repository, test_settings)
        summary = report.summary()
        assert summary["catch_rate"] >= 0.8
        assert summary["trigger_rate"] == 1.0
        assert summary["penetrations"] == 0
        assert summary["mean_reroutes"] == 0.0
