"""Text codecs for pipeline artifacts: CSV with a metadata block, JSON lines and JSON."""

import csv
import io
import json
import logging
import math
from pathlib import Path

import numpy as np

from manifold_intercept.domain.dataset import COLUMN_NAMES, SAMPLE_WIDTH, Dataset, FeatureScaling
from manifold_intercept.domain.decoder import DecoderNet
from manifold_intercept.domain.entities import RunMetrics, ScenarioTrace
from manifold_intercept.domain.manifold import Embedding
from manifold_intercept.domain.planning import PlanGraph
from manifold_intercept.errors import ConfigError

logger = logging.getLogger(__name__)

DATASET_FORMAT = "manifold-intercept-dataset/1"
EMBEDDING_FORMAT = "manifold-intercept-embedding/1"
GRAPH_FORMAT = "manifold-intercept-graph/1"
DECODER_FORMAT = "manifold-intercept-decoder/1"


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def _read_lines(path: Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ArtifactFormatError(f"cannot read {path}: {e}") from e


def _split_metadata(lines: list[str]) -> tuple[dict[str, str], int]:
    """Leading ``# key: value`` lines and the index of the first data line."""
    meta: dict[str, str] = {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, value = lines[i][1:].strip().partition(":")
        if sep:
            meta[key.strip()] = value.strip()
        i += 1
    return meta, i


def _require(meta: dict[str, str], key: str, error=None) -> str:
    if key not in meta:
        raise (error or ArtifactFormatError)(f"missing metadata field {key!r}", field=key)
    return meta[key]


# ============================================
# Dataset
# ============================================
def dump_dataset(ds: Dataset) -> str:
    """Serialise a dataset to CSV text with 17 significant digits."""
    out = io.StringIO()
    meta = {
        "format": DATASET_FORMAT,
        "seed": "" if ds.seed is None else str(ds.seed),
        "arm_model_hash": ds.arm_model_hash,
        "margin": _fmt(ds.margin),
        "n_joints": "7",
        "n_samples": str(len(ds)),
        "scaling": json.dumps(ds.scaling.to_dict()),
        "metadata": json.dumps(ds.metadata),
        "content_hash": ds.content_hash(),
    }
    for key, value in meta.items():
        out.write(f"# {key}: {value}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMN_NAMES)
    for row in ds.values:
        writer.writerow([_fmt(v) for v in row])
    return out.getvalue()


def save_dataset(ds: Dataset, path: Path) -> Path:
    return _atomic_write(path, dump_dataset(ds))


def parse_dataset(text: str) -> Dataset:
    """
    Parse dataset CSV text.

    Raises:
        DatasetSchemaError: If metadata or columns are missing.
        DatasetParseError: If a row is malformed or the file is truncated.
    """
    lines = text.splitlines()
    meta, start = _split_metadata(lines)
    if _require(meta, "format", DatasetSchemaError) != DATASET_FORMAT:
        raise DatasetSchemaError(f"unsupported dataset format {meta['format']!r}", field="format")
    try:
        expected_rows = int(_require(meta, "n_samples", DatasetSchemaError))
    except ValueError as e:
        raise DatasetParseError("n_samples is not an integer", field="n_samples") from e

    if start >= len(lines):
        raise DatasetSchemaError("missing header row", line=start + 1)
    header = next(csv.reader([lines[start]]))
    for name in COLUMN_NAMES:
        if name not in header:
            raise DatasetSchemaError(f"missing column {name!r}", line=start + 1, field=name)
    order = [header.index(name) for name in COLUMN_NAMES]

    rows = []
    for offset, raw in enumerate(csv.reader(lines[start + 1 :])):
        line_no = start + 2 + offset
        if not raw:
            continue
        if len(raw) != len(header):
            raise DatasetParseError(
                f"expected {len(header)} fields, got {len(raw)}",
                line=line_no,
                field=COLUMN_NAMES[min(len(raw), SAMPLE_WIDTH - 1)],
            )
        values = []
        for name, col in zip(COLUMN_NAMES, order):
            try:
                values.append(float(raw[col]))
            except ValueError as e:
                raise DatasetParseError(f"cannot parse {raw[col]!r}", line=line_no, field=name) from e
        rows.append(values)

    if len(rows) != expected_rows:
        raise DatasetParseError(
            f"file holds {len(rows)} rows but n_samples is {expected_rows}",
            line=len(lines),
            field="n_samples",
        )

    try:
        scaling = FeatureScaling.from_dict(json.loads(_require(meta, "scaling", DatasetSchemaError)))
        extra = json.loads(meta.get("metadata", "{}"))
    except (json.JSONDecodeError, KeyError) as e:
        raise DatasetParseError(f"invalid scaling metadata: {e}", field="scaling") from e

    ds = Dataset(
        values=np.array(rows, dtype=float).reshape(-1, SAMPLE_WIDTH),
        scaling=scaling,
        seed=int(meta["seed"]) if meta.get("seed") else None,
        arm_model_hash=meta.get("arm_model_hash", ""),
        margin=float(meta.get("margin", "0")),
        metadata=extra,
    )
    stored = meta.get("content_hash")
    if stored and stored != ds.content_hash():
        raise DatasetParseError("content hash does not match the rows", field="content_hash")
    return ds


def load_dataset(path: Path) -> Dataset:
    return parse_dataset("\n".join(_read_lines(path)))


# ============================================
# Embedding
# ============================================
def save_embedding(emb: Embedding, path: Path) -> Path:
    out = io.StringIO()
    meta = {
        "format": EMBEDDING_FORMAT,
        "alpha": _fmt(emb.alpha),
        "steps": str(emb.steps),
        "eigenvalues": json.dumps([float(v) for v in emb.eigenvalues]),
        "coordinates": "lambda^t * psi",
        "dataset_hash": emb.dataset_hash,
        "embedding_hash": emb.content_hash(),
    }
    for key, value in meta.items():
        out.write(f"# {key}: {value}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["index", *[f"z{j + 1}" for j in range(emb.dims)]])
    for i, row in enumerate(emb.coords):
        writer.writerow([i, *[_fmt(v) for v in row]])
    return _atomic_write(path, out.getvalue())


def load_embedding(path: Path) -> Embedding:
    """
    Load an embedding written by ``save_embedding``.

    Raises:
        ArtifactFormatError: If metadata is missing, rows are out of order or the hash disagrees.
    """
    lines = _read_lines(path)
    meta, start = _split_metadata(lines)
    if _require(meta, "format") != EMBEDDING_FORMAT:
        raise ArtifactFormatError(f"unsupported embedding format {meta['format']!r}", field="format")
    eigenvalues = np.asarray(json.loads(_require(meta, "eigenvalues")), dtype=float)
    steps = int(_require(meta, "steps"))
    coords = []
    for offset, raw in enumerate(csv.reader(lines[start + 1 :])):
        if not raw:
            continue
        line_no = start + 2 + offset
        try:
            index = int(raw[0])
            values = [float(v) for v in raw[1:]]
        except (ValueError, IndexError) as e:
            raise ArtifactFormatError(f"malformed row: {e}", line=line_no) from e
        if index != len(coords) or len(values) != len(eigenvalues):
            raise ArtifactFormatError("rows must be contiguous and match the eigenvalue count", line=line_no)
        coords.append(values)
    coords_arr = np.array(coords, dtype=float).reshape(-1, len(eigenvalues))
    emb = Embedding(
        coords=coords_arr,
        eigenvalues=eigenvalues,
        eigenvectors=coords_arr / eigenvalues**steps,
        alpha=float(_require(meta, "alpha")),
        steps=steps,
        dataset_hash=meta.get("dataset_hash", ""),
    )
    stored = meta.get("embedding_hash")
    if stored and stored != emb.content_hash():
        raise ArtifactFormatError("embedding hash does not match the rows", field="embedding_hash")
    return emb


# ============================================
# Graph
# ============================================
def save_graph(g: PlanGraph, path: Path) -> Path:
    lines = [
        json.dumps(
            {
                "format": GRAPH_FORMAT,
                "k": g.k,
                "dataset_hash": g.dataset_hash,
                "embedding_hash": g.embedding_hash,
                "graph_hash": g.content_hash(),
            }
        )
    ]
    for node in g.nodes:
        nbrs = sorted(g.adjacency[node])
        lines.append(
            json.dumps(
                {
                    "node": node,
                    "neighbors": nbrs,
                    "weights": [g.adjacency[node][j] for j in nbrs],
                    "safe": True,
                    "giant": node in g.giant,
                    "coords": [float(c) for c in g.coords[node]],
                }
            )
        )
    return _atomic_write(path, "\n".join(lines) + "\n")


def load_graph(path: Path) -> PlanGraph:
    """
    Load a graph written by ``save_graph``.

    Raises:
        ArtifactFormatError: On malformed lines, asymmetric adjacency or a hash mismatch.
    """
    lines = [line for line in _read_lines(path) if line.strip()]
    if not lines:
        raise ArtifactFormatError("empty graph file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ArtifactFormatError(f"invalid header: {e}", line=1) from e
    if header.get("format") != GRAPH_FORMAT:
        raise ArtifactFormatError(f"unsupported graph format {header.get('format')!r}", line=1, field="format")

    adjacency: dict[int, dict[int, float]] = {}
    coords: dict[int, np.ndarray] = {}
    giant: set[int] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            node = int(rec["node"])
            adjacency[node] = {int(j): float(w) for j, w in zip(rec["neighbors"], rec["weights"], strict=True)}
            coords[node] = np.asarray(rec["coords"], dtype=float)
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
            raise ArtifactFormatError(f"malformed node record: {e}", line=line_no) from e
        if not rec.get("safe", True):
            raise ArtifactFormatError(f"node {node} is not safe", line=line_no, field="safe")
        if rec.get("giant", False):
            giant.add(node)

    for i, nbrs in adjacency.items():
        for j, w in nbrs.items():
            if adjacency.get(j, {}).get(i) != w:
                raise ArtifactFormatError(f"edge {i}-{j} is not symmetric", field="neighbors")

    g = PlanGraph(
        adjacency=adjacency,
        coords=coords,
        giant=frozenset(giant),
        k=int(header.get("k", 0)),
        dataset_hash=header.get("dataset_hash", ""),
        embedding_hash=header.get("embedding_hash", ""),
    )
    stored = header.get("graph_hash")
    if stored and stored != g.content_hash():
        raise ArtifactFormatError("graph hash does not match the adjacency", line=1, field="graph_hash")
    return g


# ============================================
# Decoder
# ============================================
def save_decoder(net: DecoderNet, path: Path) -> Path:
    payload = {"format": DECODER_FORMAT, **net.to_payload()}
    return _atomic_write(path, json.dumps(payload))


def load_decoder(path: Path, expected: dict | None = None) -> DecoderNet:
    text = "\n".join(_read_lines(path))
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArtifactFormatError(f"invalid decoder JSON: {e}", line=e.lineno) from e
    if payload.get("format") != DECODER_FORMAT:
        raise ArtifactFormatError(f"unsupported decoder format {payload.get('format')!r}", field="format")
    return DecoderNet.from_payload(payload, expected)


# ============================================
# Run outputs
# ============================================
def dump_trace(trace: ScenarioTrace) -> str:
    """One CSV row per tick; events joined with ``|``."""
    n_joints = len(trace.rows[0].joints) if trace.rows else 0
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        [
            "time",
            "ball_x", "ball_y", "ball_z",
            "obs_fx", "obs_fy", "obs_z",
            "est_fx", "est_fy", "est_z",
            "p_fx", "p_fy", "p_z",
            "stage",
            "route_revision",
            *[f"q_{j}" for j in range(n_joints)],
            "ee_x", "ee_y", "ee_z",
            "min_clearance",
            "events",
        ]
    )  # fmt: skip
    for row in trace.rows:
        writer.writerow(
            [
                _fmt(row.time),
                *map(_fmt, row.ball),
                *map(_fmt, row.observation),
                *map(_fmt, row.estimate),
                *map(_fmt, row.covariance_diag),
                row.stage,
                row.route_revision,
                *map(_fmt, row.joints),
                *map(_fmt, row.ee),
                _fmt(row.min_clearance),
                "|".join(e.value for e in row.events),
            ]
        )
    return out.getvalue()


def write_trace_csv(trace: ScenarioTrace, path: Path) -> Path:
    return _atomic_write(path, dump_trace(trace))


METRIC_COLUMNS = (
    "scenario",
    "seed",
    "caught",
    "catch_error",
    "time_to_catch",
    "catch_tolerance",
    "triggered",
    "reroutes",
    "blocked",
    "min_clearance",
    "penetrations",
    "route_lengths",
)


def dump_metrics(runs: list[RunMetrics]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for m in runs:
        writer.writerow(
            [
                m.scenario,
                m.seed,
                int(m.caught),
                _fmt(m.catch_error),
                "" if m.time_to_catch is None else _fmt(m.time_to_catch),
                _fmt(m.catch_tolerance),
                int(m.triggered),
                m.reroutes,
                m.blocked,
                _fmt(m.min_clearance) if math.isfinite(m.min_clearance) else "inf",
                m.penetrations,
                "|".join(str(n) for n in m.route_lengths),
            ]
        )
    return out.getvalue()


def write_metrics_csv(runs: list[RunMetrics], path: Path) -> Path:
    return _atomic_write(path, dump_metrics(runs))


class ArtifactFormatError(ConfigError):
    """Raised when an artifact file is malformed; carries the offending line and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        location = ", ".join(
            part for part in (f"line {line}" if line else "", f"field {field!r}" if field else "") if part
        )
        super().__init__(f"{message} ({location})" if location else message)
        self.line = line
        self.field = field


class DatasetParseError(ArtifactFormatError):
    """Raised when a dataset row or value cannot be parsed."""

    pass


class DatasetSchemaError(ArtifactFormatError):
    """Raised when dataset metadata or columns are missing."""

    pass
