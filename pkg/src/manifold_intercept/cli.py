"""Command-line entry point: build artifacts, run scenarios and batches."""

import argparse
import json
import logging
import sys
from pathlib import Path

from manifold_intercept import __version__
from manifold_intercept.config import Settings, get_settings
from manifold_intercept.domain.dataset import generate
from manifold_intercept.domain.decoder import TrainHyper, gradient_check, reconstruction_report, train
from manifold_intercept.domain.manifold import (
    build_operator,
    embed,
    label_separability,
    neighborhood_preservation,
)
from manifold_intercept.domain.planning import build_graph
from manifold_intercept.domain.services import batch_run, load_artifacts, run_scenario
from manifold_intercept.errors import ConfigError, InterceptError
from manifold_intercept.infrastructure.storage import (
    DATASET_FILE,
    DECODER_FILE,
    EMBEDDING_FILE,
    GRAPH_FILE,
    FileArtifactRepository,
    build_scenario_config,
    load_scenario,
    write_metrics_csv,
    write_trace_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=2, default=float))


def _artifact(s: Settings, name: str) -> Path:
    return Path(s.artifact_dir) / name


# ============================================
# Subcommands
# ============================================
def cmd_gen_data(s: Settings, args: argparse.Namespace, repo: FileArtifactRepository) -> None:
    model = repo.load_arm_model(s.arm_model_path)
    ds = generate(
        model,
        args.n or s.n_samples,
        (s.obstacle_box_lo, s.obstacle_box_hi),
        seed=s.seed,
        margin=s.label_margin,
        workers=s.workers,
    )
    path = repo.save_dataset(ds, args.out or _artifact(s, DATASET_FILE))
    _emit(
        {
            "dataset": str(path),
            "samples": len(ds),
            "colliding": int(ds.collision.sum()),
            "content_hash": ds.content_hash(),
        }
    )


def cmd_embed(s: Settings, args: argparse.Namespace, repo: FileArtifactRepository) -> None:
    ds = repo.load_dataset(_artifact(s, DATASET_FILE))
    sparse = not s.dense_kernel(len(ds))
    op = build_operator(
        ds,
        alpha=args.alpha,
        knn_sparsify=s.sparse_mutual_k if sparse else None,
        steps=s.diffusion_steps,
        bandwidth_k=s.kernel_knn,
    )
    emb = embed(op, s.latent_dims)
    path = repo.save_embedding(emb, args.out or _artifact(s, EMBEDDING_FILE))
    separability = label_separability(emb, ds.collision)
    latent_score, baseline = neighborhood_preservation(ds.features(), emb.coords, seed=s.seed)
    _emit(
        {
            "embedding": str(path),
            "alpha": op.alpha,
            "sparse": sparse,
            "eigenvalues": emb.eigenvalues.tolist(),
            "label_agreement": separability.agreement,
            "label_agreement_chance": separability.chance,
            "neighborhood_preservation": latent_score,
            "random_projection_baseline": baseline,
        }
    )


def cmd_train_decoder(s: Settings, args: argparse.Namespace, repo: FileArtifactRepository) -> None:
    model = repo.load_arm_model(s.arm_model_path)
    ds = repo.load_dataset(_artifact(s, DATASET_FILE))
    emb = repo.load_embedding(_artifact(s, EMBEDDING_FILE))
    hyper = TrainHyper(
        learning_rate=s.decoder_learning_rate,
        momentum=s.decoder_momentum,
        epochs=args.epochs or s.decoder_epochs,
        batch_size=s.decoder_batch_size,
        validation_fraction=s.decoder_validation_fraction,
        hidden=s.decoder_hidden,
        seed=s.seed,
    )
    net, report = train(emb, ds, hyper, model.limits)
    path = repo.save_decoder(net, args.out or _artifact(s, DECODER_FILE))
    quality = reconstruction_report(net, emb, ds)
    _emit(
        {
            "decoder": str(path),
            "best_epoch": report.best_epoch,
            "train_loss": report.train_loss,
            "validation_loss": report.validation_loss,
            "median_joint_error": quality.median_error,
            "duplicate_decodes": quality.duplicate_decodes,
            "variance_ratio": quality.variance_ratio.tolist(),
            "collapsed": quality.collapsed,
            "gradient_check": gradient_check(net, seed=s.seed),
        }
    )


def cmd_build_graph(s: Settings, args: argparse.Namespace, repo: FileArtifactRepository) -> None:
    ds = repo.load_dataset(_artifact(s, DATASET_FILE))
    emb = repo.load_embedding(_artifact(s, EMBEDDING_FILE))
    g = build_graph(emb, ds, k=args.k or s.graph_k)
    path = repo.save_graph(g, args.out or _artifact(s, GRAPH_FILE))
    _emit(
        {
            "graph": str(path),
            "nodes": len(g),
            "routable": len(g.giant),
            "k": g.k,
            "median_edge_weight": g.median_edge_weight(),
        }
    )


def _run_options(args: argparse.Namespace) -> dict:
    return {
        "adaptive": False if args.no_adaptive else None,
        "interpolation": args.interpolation,
        "catch_tolerance": args.catch_tolerance,
    }


def cmd_run(s: Settings, args: argparse.Namespace, repo: FileArtifactRepository) -> None:
    scenario = load_scenario(args.scenario or s.scenario_path)
    cfg = build_scenario_config(s, scenario, **_run_options(args))
    trace, metrics = run_scenario(cfg, load_artifacts(repo, cfg), s)
    out = args.out or _artifact(s, f"trace_{scenario.name}_{cfg.seed}.csv")
    write_trace_csv(trace, out)
    _emit({"trace": str(out), **metrics.model_dump(mode="json")})


def cmd_batch(s: Settings, args: argparse.Namespace, repo: FileArtifactRepository) -> None:
    paths = args.scenario or [s.scenario_path]
    cfgs = [build_scenario_config(s, load_scenario(p), **_run_options(args)) for p in paths]
    seeds = list(range(s.seed, s.seed + args.runs))
    traces: list = []
    report = batch_run(cfgs, seeds, repo, s, workers=s.workers, traces=traces)
    out = args.out or _artifact(s, "metrics.csv")
    write_metrics_csv(report.runs, out)
    if args.traces_dir:
        for trace in traces:
            write_trace_csv(trace, Path(args.traces_dir) / f"trace_{trace.scenario}_{trace.seed}.csv")
    _emit({"metrics": str(out), **report.summary()})


COMMANDS = {
    "gen-data": cmd_gen_data,
    "embed": cmd_embed,
    "train-decoder": cmd_train_decoder,
    "build-graph": cmd_build_graph,
    "run": cmd_run,
    "batch": cmd_batch,
}


# ============================================
# Parser
# ============================================
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of setting overrides")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--out", type=Path, help="Output file")
    common.add_argument("--artifacts", type=Path, help="Artifact directory")
    common.add_argument("--log-level", help="Logging level, e.g. DEBUG")

    parser = argparse.ArgumentParser(
        prog="manifold-intercept",
        description="Latent-manifold ball interception: artifacts, scenario runs and batches.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Sample and label the dataset")
    p.add_argument("--n", type=int, help="Number of samples")

    p = sub.add_parser("embed", parents=[common], help="Diffusion-map embedding of the dataset")
    p.add_argument("--alpha", type=float, help="Kernel bandwidth; median kNN heuristic when omitted")

    p = sub.add_parser("train-decoder", parents=[common], help="Train the latent-to-joint decoder")
    p.add_argument("--epochs", type=int, help="Training epochs")

    p = sub.add_parser("build-graph", parents=[common], help="Build the latent routing graph")
    p.add_argument("--k", type=int, help="Nearest neighbours per node")

    for name, help_text in (("run", "Run one scenario"), ("batch", "Run seeded scenario batches")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument(
            "--scenario",
            type=Path,
            action="append" if name == "batch" else "store",
            help="Scenario JSON file",
        )
        p.add_argument("--no-adaptive", action="store_true", help="Disable relabelling and rerouting")
        p.add_argument("--interpolation", choices=("joint", "decoder"), help="Edge execution mode")
        p.add_argument("--catch-tolerance", type=float, help="Catch radius (m)")
        if name == "batch":
            p.add_argument("--runs", type=int, default=50, help="Seeds per scenario")
            p.add_argument("--traces-dir", type=Path, help="Write every run's trace here")
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Parse arguments, run one subcommand and map failures to exit codes.

    Returns:
        0 on success, 2 on configuration or input errors, 3 on pipeline failures.
    """
    args = build_parser().parse_args(argv)
    try:
        s = get_settings().with_overrides(
            args.config,
            seed=args.seed,
            artifact_dir=args.artifacts,
            log_level=args.log_level,
        )
    except ConfigError as e:
        logging.basicConfig(stream=sys.stderr)
        logger.error("%s", e)
        return EXIT_CONFIG

    logging.basicConfig(
        level=s.log_level.upper(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](s, args, FileArtifactRepository())
    except (ConfigError, OSError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except InterceptError as e:
        logger.error("%s", e)
        return EXIT_NUMERICAL
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
