"""MCP server exposing interception runs and route planning."""

import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any

from mcp.server import Server
from mcp.server.stdio import stdio_server
from mcp.types import TextContent, Tool

from manifold_intercept.config import Settings, settings as default_settings
from manifold_intercept.domain.dataset import EeKdTree, nearest_ee
from manifold_intercept.domain.planning import NoPathError, shortest_path
from manifold_intercept.domain.repository import IArtifactRepository
from manifold_intercept.domain.services import batch_run, load_artifacts, run_scenario
from manifold_intercept.errors import InterceptError
from manifold_intercept.infrastructure.storage import (
    DATASET_FILE,
    GRAPH_FILE,
    FileArtifactRepository,
    build_scenario_config,
    load_scenario,
    write_trace_csv,
)
from manifold_intercept.mcp.v1.requests import (
    BatchRunV1Request,
    PlanRouteV1Request,
    RunScenarioV1Request,
)
from manifold_intercept.mcp.v1.responses import (
    BatchRunV1Response,
    PlanRouteV1Response,
    RunScenarioV1Response,
    TraceEventV1Response,
)
from manifold_intercept.utils.schema_utils import pydantic_to_input_schema

logger = logging.getLogger(__name__)


class ManifoldInterceptMcpServer:
    """MCP server for scenario runs and latent-graph routing."""

    def __init__(
        self,
        repository: IArtifactRepository | None = None,
        settings: Settings | None = None,
    ):
        """
        Initialize the MCP server.

        Args:
            repository: Artifact source; files under the settings' artifact dir by default.
            settings: Tunables; the process-wide settings when omitted.
        """
        self.settings = settings or default_settings
        self.repository = repository or FileArtifactRepository()
        self.server = Server("manifold-intercept")
        self._setup_tools()

    def _setup_tools(self) -> None:
        """Register MCP tools."""

        @self.server.list_tools()
        async def list_tools() -> list[Tool]:
            return self.tools()

        @self.server.call_tool()
        async def call_tool(name: str, arguments: dict[str, Any]) -> list[TextContent]:
            return await self.handle_tool(name, arguments)

    def tools(self) -> list[Tool]:
        """Tool definitions with schemas derived from the request models."""
        return [
            Tool(
                name="run_scenario",
                description=(
                    "Run one simulated ball-interception scenario against trained artifacts. "
                    "Returns catch outcome, reroute count, clearance and the event list."
                ),
                inputSchema=pydantic_to_input_schema(RunScenarioV1Request),
            ),
            Tool(
                name="batch_run",
                description=(
                    "Run a scenario once per seed with jittered throws and report the catch "
                    "rate with a 95% Wilson interval."
                ),
                inputSchema=pydantic_to_input_schema(BatchRunV1Request),
            ),
            Tool(
                name="plan_route",
                description=(
                    "Shortest collision-free route through the latent graph between two "
                    "nodes, optionally avoiding blocked nodes."
                ),
                inputSchema=pydantic_to_input_schema(PlanRouteV1Request),
            ),
        ]

    async def handle_tool(self, name: str, arguments: dict[str, Any]) -> list[TextContent]:
        """Dispatch a tool call; domain and validation errors come back as text."""
        handlers = {
            "run_scenario": self._run_scenario,
            "batch_run": self._batch_run,
            "plan_route": self._plan_route,
        }
        handler = handlers.get(name)
        if handler is None:
            return [TextContent(type="text", text=f"Error: Unknown tool: {name}")]
        try:
            result = await asyncio.to_thread(handler, arguments or {})
        except (InterceptError, ValueError) as e:
            logger.warning("Tool %s failed: %s", name, e)
            return [TextContent(type="text", text=f"Error: {e}")]
        except Exception as e:
            logger.exception("Error in tool %s", name)
            return [TextContent(type="text", text=f"Error: {e}")]
        return [TextContent(type="text", text=json.dumps(result))]

    def _config(self, artifact_dir: str | None, scenario_path: str | None, seed: int, **options):
        scenario = load_scenario(Path(scenario_path) if scenario_path else self.settings.scenario_path)
        return build_scenario_config(
            self.settings,
            scenario,
            Path(artifact_dir) if artifact_dir else None,
            seed,
            **options,
        )

    def _run_scenario(self, args: dict) -> dict:
        """Handle run_scenario tool."""
        req = RunScenarioV1Request(**args)
        cfg = self._config(
            req.artifact_dir,
            req.scenario_path,
            req.seed,
            adaptive=req.adaptive,
            interpolation=req.interpolation,
            catch_tolerance=req.catch_tolerance,
        )
        trace, metrics = run_scenario(cfg, load_artifacts(self.repository, cfg), self.settings)
        if req.trace_path:
            write_trace_csv(trace, Path(req.trace_path))

        response = RunScenarioV1Response(
            scenario=metrics.scenario,
            seed=metrics.seed,
            caught=metrics.caught,
            catch_error=metrics.catch_error,
            time_to_catch=metrics.time_to_catch,
            reroutes=metrics.reroutes,
            blocked=metrics.blocked,
            min_clearance=metrics.min_clearance,
            penetrations=metrics.penetrations,
            ticks=len(trace.rows),
            events=[TraceEventV1Response(time=t, event=e.value) for t, e in trace.events()],
            trace_path=req.trace_path,
        )
        return response.model_dump(mode="json")

    def _batch_run(self, args: dict) -> dict:
        """Handle batch_run tool."""
        req = BatchRunV1Request(**args)
        cfg = self._config(req.artifact_dir, req.scenario_path, 0, adaptive=req.adaptive)
        report = batch_run([cfg], req.seeds, self.repository, self.settings, workers=req.workers)
        response = BatchRunV1Response(
            **report.summary(),
            caught_seeds=[r.seed for r in report.runs if r.caught],
        )
        return response.model_dump(mode="json")

    def _plan_route(self, args: dict) -> dict:
        """Handle plan_route tool."""
        req = PlanRouteV1Request(**args)
        if (req.target is None) == (req.target_point is None):
            raise ValueError("give exactly one of target or target_point")
        root = Path(req.artifact_dir) if req.artifact_dir else self.settings.artifact_dir
        g = self.repository.load_graph(root / GRAPH_FILE)
        target = req.target
        if target is None:
            ds = self.repository.load_dataset(root / DATASET_FILE)
            target, _ = nearest_ee(EeKdTree.from_dataset(ds, sorted(g.giant)), req.target_point)
        try:
            route = shortest_path(g, req.source, target, blocked=frozenset(req.blocked))
        except NoPathError as e:
            return PlanRouteV1Response(found=False, message=str(e)).model_dump(mode="json")
        return PlanRouteV1Response(
            found=True, nodes=list(route.nodes), weight=route.weight
        ).model_dump(mode="json")


async def serve(settings: Settings | None = None) -> None:
    """Run the server over stdio until the client disconnects."""
    app = ManifoldInterceptMcpServer(settings=settings)
    async with stdio_server() as (read_stream, write_stream):
        await app.server.run(read_stream, write_stream, app.server.create_initialization_options())


def main() -> None:
    """Run the MCP stdio server."""
    logging.basicConfig(level=default_settings.log_level, stream=sys.stderr)
    logger.info("Starting manifold-intercept MCP server on stdio")
    asyncio.run(serve())


if __name__ == "__main__":
    main()
