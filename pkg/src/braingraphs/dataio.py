"""Ingestion, dataset storage, graph export and synthetic data.

On-disk layouts
---------------
Dataset directory (written by :func:`save_dataset`)::

    dataset.json        subject list, labels, shapes, digest
    bold/<id>.npy       float64 T x n matrix per subject

Graph export directory (written by :func:`export_graphs`)::

    manifest.json
    graphs/<id>.jsonl   one JSON graph object per line   (format "jsonl")
    graphs/<id>.bgpk    packed little-endian binary       (format "binary")
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .correlation import View
from .errors import (
    ClassTooSmall,
    InvalidSpec,
    IoError,
    NonFinite,
    NonRectangular,
    ParseError,
    SerializationOverflow,
    ValidationError,
)
from .featurize import BrainGraph, EdgeFeatures, NodeFeatures
from .signal import BoldMatrix
from .topology import Adjacency

TIME_BY_ROI = "time-by-roi"
ROI_BY_TIME = "roi-by-time"
JSONL = "jsonl"
BINARY = "binary"
SPLITS = ("train", "test", "val")
DEFAULT_PROPORTIONS = (0.7, 0.2, 0.1)

_EXT = {JSONL: ".jsonl", BINARY: ".bgpk"}


@dataclass
class SubjectRecord:
    subject_id: str
    bold: BoldMatrix
    label: Optional[int] = None
    source_path: str = ""


# -- CSV ingestion -------------------------------------------------------------


def _is_number(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def ingest_csv(path, layout: str = TIME_BY_ROI, subject_id=None, label=None) -> SubjectRecord:
    """Read one subject's ROI table.

    ``time-by-roi`` tables have one row per time point and may start with a
    header row of ROI labels. ``roi-by-time`` tables have one row per ROI and
    may carry ROI labels in the first column. Error coordinates are 1-based
    file line and column numbers.
    """
    if layout not in (TIME_BY_ROI, ROI_BY_TIME):
        raise ValidationError(f"unknown layout {layout!r}")
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [(ln, row) for ln, row in enumerate(csv.reader(fh), start=1) if row]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise NonRectangular(f"{path} is empty")

    labels = None
    first_col = 0
    if layout == TIME_BY_ROI and not all(_is_number(c) for c in rows[0][1]):
        labels = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    elif layout == ROI_BY_TIME and rows and not _is_number(rows[0][1][0]):
        if all(not _is_number(r[0]) for _, r in rows):
            labels = [r[0].strip() for _, r in rows]
            first_col = 1
        else:
            rows = rows[1:]
    if not rows:
        raise NonRectangular(f"{path} has no numeric rows")

    width = len(rows[0][1])
    data = np.empty((len(rows), width - first_col))
    bad = []
    for r, (ln, row) in enumerate(rows):
        if len(row) != width:
            raise NonRectangular(f"line {ln} has {len(row)} fields, expected {width}")
        for c in range(first_col, width):
            token = row[c].strip()
            try:
                v = float(token)
            except ValueError:
                raise ParseError(ln, c + 1, token) from None
            if not math.isfinite(v):
                bad.append((ln, c + 1))
            data[r, c - first_col] = v
    if bad:
        raise NonFinite(bad)
    if layout == ROI_BY_TIME:
        data = data.T
    sid = subject_id if subject_id is not None else path.stem
    return SubjectRecord(sid, BoldMatrix(data, labels), label, str(path))


def write_bold_csv(path, bold: BoldMatrix, layout: str = TIME_BY_ROI):
    """Write a table that :func:`ingest_csv` reads back bit-exactly."""
    values = bold.values if layout == TIME_BY_ROI else bold.values.T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if layout == TIME_BY_ROI and bold.roi_labels:
            w.writerow(bold.roi_labels)
        for k, row in enumerate(values):
            cells = [repr(float(v)) for v in row]
            if layout == ROI_BY_TIME and bold.roi_labels:
                cells = [bold.roi_labels[k]] + cells
            w.writerow(cells)


def read_labels_file(path) -> dict:
    """``subject_id,label`` CSV (header optional) to a dict."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or (not out and not _is_number(row[1])):
                continue
            out[row[0].strip()] = int(row[1])
    return out


def ingest_directory(src, layout=TIME_BY_ROI, labels_file=None) -> list:
    src = Path(src)
    files = sorted(src.glob("*.csv"))
    if not files:
        raise IoError(f"no .csv files in {src}")
    labels = read_labels_file(labels_file) if labels_file else {}
    records = [ingest_csv(f, layout, label=labels.get(f.stem)) for f in files]
    check_dataset(records)
    return records


# -- dataset store -------------------------------------------------------------


def check_dataset(records: Sequence[SubjectRecord]):
    ids = [r.subject_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate subject ids")
    ns = {r.bold.roi_count for r in records}
    if len(ns) > 1:
        raise ValidationError(f"inconsistent ROI counts across subjects: {sorted(ns)}")


def dataset_digest(records: Iterable[SubjectRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(r.subject_id.encode())
        h.update(b"\0")
        h.update(str(r.label).encode())
        h.update(struct.pack("<II", *r.bold.values.shape))
        h.update(np.ascontiguousarray(r.bold.values, dtype="<f8").tobytes())
    return h.hexdigest()


def save_dataset(records: Sequence[SubjectRecord], out_dir, paradigm: str = "rest") -> dict:
    """Write ``records`` as a dataset directory. ``paradigm`` is ``rest`` or ``task``."""
    check_dataset(records)
    out = Path(out_dir)
    try:
        (out / "bold").mkdir(parents=True, exist_ok=True)
        subjects = []
        for r in records:
            rel = f"bold/{r.subject_id}.npy"
            np.save(out / rel, np.ascontiguousarray(r.bold.values, dtype="<f8"))
            subjects.append(
                {
                    "subject_id": r.subject_id,
                    "label": r.label,
                    "file": rel,
                    "t": r.bold.t_count,
                    "source_path": r.source_path,
                }
            )
        manifest = {
            "kind": "braingraphs-dataset",
            "version": 1,
            "n": records[0].bold.roi_count if records else 0,
            "roi_labels": list(records[0].bold.roi_labels or []) if records else [],
            "subject_count": len(records),
            "paradigm": paradigm,
            "digest": dataset_digest(records),
            "subjects": subjects,
        }
        (out / "dataset.json").write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write dataset to {out}: {exc}") from exc
    return manifest


def dataset_info(path) -> dict:
    try:
        return json.loads((Path(path) / "dataset.json").read_text())
    except OSError as exc:
        raise IoError(f"cannot read dataset at {path}: {exc}") from exc


def load_dataset(path) -> list:
    path = Path(path)
    manifest = dataset_info(path)
    try:
        labels = tuple(manifest.get("roi_labels") or ()) or None
        return [
            SubjectRecord(
                s["subject_id"],
                BoldMatrix(np.load(path / s["file"]), labels),
                s.get("label"),
                s.get("source_path", ""),
            )
            for s in manifest["subjects"]
        ]
    except OSError as exc:
        raise IoError(f"cannot read dataset at {path}: {exc}") from exc


# -- graph serialization ----------------------------------------------------------


def jsonable(obj):
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        raise SerializationOverflow(f"non-finite value {obj} cannot be serialized")
    if isinstance(obj, View):
        return obj.name
    return obj


def graph_to_dict(g: BrainGraph) -> dict:
    x = g.node_features.values
    if not np.all(np.isfinite(x)):
        raise SerializationOverflow(f"non-finite node features in {g.subject_id}")
    d = {
        "subject_id": g.subject_id,
        "label": g.label,
        "n": g.n,
        "edges": [list(e) for e in g.adjacency.edges],
        "views": [v.name for v in g.node_features.views],
        "x": x.ravel().tolist(),
        "e": None,
        "meta": jsonable(g.meta),
    }
    if g.edge_features is not None:
        ef = g.edge_features
        d["e"] = {
            "views": [v.name for v in ef.views],
            "rho": jsonable(list(ef.rho)),
            "values": ef.values.astype(int).tolist(),
        }
    return d


def graph_from_dict(d: dict) -> BrainGraph:
    n = int(d["n"])
    views = tuple(View.parse(v) for v in d["views"])
    x = np.array(d["x"], dtype=np.float64).reshape(n, n * len(views))
    meta = d.get("meta") or {}
    adj = Adjacency(n, tuple(tuple(e) for e in d["edges"]), meta.get("topology", {}).get("density_target"))
    ef = None
    if d.get("e") is not None:
        e = d["e"]
        vals = np.array(e["values"], dtype=np.uint8).reshape(len(adj), len(e["views"]))
        ef = EdgeFeatures(vals, tuple(View.parse(v) for v in e["views"]), tuple(float(r) for r in e["rho"]))
    return BrainGraph(d["subject_id"], adj, NodeFeatures(x, views), ef, d.get("label"), meta)


def graph_to_json(g: BrainGraph) -> str:
    return json.dumps(graph_to_dict(g), separators=(",", ":"), allow_nan=False)


def graph_from_json(line: str) -> BrainGraph:
    return graph_from_dict(json.loads(line))


_MAGIC = b"BGPK"
_HEADER = struct.Struct("<4sHHIIIIq")
_U32 = struct.Struct("<I")
_HAS_LABEL = 1
_HAS_EDGE_FEATURES = 2


def graph_to_bytes(g: BrainGraph) -> bytes:
    """Packed form: fixed header, length-prefixed UTF-8 blocks, then raw arrays.

    Header ``<4sHHIIIIq``: magic ``BGPK``, version, flags, n, edge count,
    node-feature columns, edge-feature columns, label. Then subject id and a
    JSON text block (views, edge-feature views, meta), each prefixed by a
    u32 byte length; edges as u32 pairs; node features as f64; edge features
    as u8; edge thresholds as f64. All little-endian.
    """
    x = g.node_features.values
    if not np.all(np.isfinite(x)):
        raise SerializationOverflow(f"non-finite node features in {g.subject_id}")
    ef = g.edge_features
    n_edges = len(g.adjacency)
    e_cols = 0 if ef is None else ef.values.shape[1]
    flags = (_HAS_LABEL if g.label is not None else 0) | (_HAS_EDGE_FEATURES if ef is not None else 0)
    if max(g.n, n_edges, x.shape[1]) >= 2**32:
        raise SerializationOverflow("dimension does not fit in 32 bits")
    text = json.dumps(
        {
            "views": [v.name for v in g.node_features.views],
            "e_views": [] if ef is None else [v.name for v in ef.views],
            "meta": jsonable(g.meta),
        },
        separators=(",", ":"),
    ).encode()
    sid = g.subject_id.encode()
    parts = [
        _HEADER.pack(_MAGIC, 1, flags, g.n, n_edges, x.shape[1], e_cols, g.label if g.label is not None else -1),
        _U32.pack(len(sid)),
        sid,
        _U32.pack(len(text)),
        text,
        np.asarray(g.adjacency.edges, dtype="<u4").reshape(n_edges, 2).tobytes(),
        np.ascontiguousarray(x, dtype="<f8").tobytes(),
    ]
    if ef is not None:
        parts.append(np.ascontiguousarray(ef.values, dtype="u1").tobytes())
        parts.append(np.asarray(ef.rho, dtype="<f8").tobytes())
    return b"".join(parts)


def graph_from_bytes(buf: bytes) -> BrainGraph:
    magic, version, flags, n, n_edges, x_cols, e_cols, label = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC or version != 1:
        raise ValidationError("not a packed brain graph (bad magic or version)")
    off = _HEADER.size
    (k,) = _U32.unpack_from(buf, off)
    sid = buf[off + 4: off + 4 + k].decode()
    off += 4 + k
    (k,) = _U32.unpack_from(buf, off)
    text = json.loads(buf[off + 4: off + 4 + k])
    off += 4 + k

    def take(dtype, count):
        nonlocal off
        a = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
        off += a.nbytes
        return a

    edges = take("<u4", 2 * n_edges).reshape(n_edges, 2)
    x = take("<f8", n * x_cols).reshape(n, x_cols).astype(np.float64)
    meta = text["meta"]
    adj = Adjacency(n, tuple(map(tuple, edges.tolist())), meta.get("topology", {}).get("density_target"))
    ef = None
    if flags & _HAS_EDGE_FEATURES:
        vals = take("u1", n_edges * e_cols).reshape(n_edges, e_cols).copy()
        rho = tuple(take("<f8", e_cols).tolist())
        ef = EdgeFeatures(vals, tuple(View.parse(v) for v in text["e_views"]), rho)
    views = tuple(View.parse(v) for v in text["views"])
    return BrainGraph(
        sid, adj, NodeFeatures(x, views), ef, int(label) if flags & _HAS_LABEL else None, meta
    )


def graphs_equal(a: BrainGraph, b: BrainGraph) -> bool:
    """Structural equality, with node features compared bit for bit."""
    same_e = (a.edge_features is None) == (b.edge_features is None)
    if same_e and a.edge_features is not None:
        same_e = (
            np.array_equal(a.edge_features.values, b.edge_features.values)
            and a.edge_features.views == b.edge_features.views
            and a.edge_features.rho == b.edge_features.rho
        )
    return (
        same_e
        and a.subject_id == b.subject_id
        and a.label == b.label
        and a.adjacency.n == b.adjacency.n
        and a.adjacency.edges == b.adjacency.edges
        and a.node_features.views == b.node_features.views
        and a.node_features.values.shape == b.node_features.values.shape
        and a.node_features.values.tobytes() == b.node_features.values.tobytes()
        and jsonable(a.meta) == jsonable(b.meta)
    )


def _graph_file(g_or_id, fmt):
    sid = g_or_id if isinstance(g_or_id, str) else g_or_id.subject_id
    return f"graphs/{sid}{_EXT[fmt]}"


def write_graph(g: BrainGraph, out_dir, fmt: str = JSONL) -> str:
    rel = _graph_file(g, fmt)
    path = Path(out_dir) / rel
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == JSONL:
            path.write_text(graph_to_json(g) + "\n")
        else:
            path.write_bytes(graph_to_bytes(g))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return rel


def read_graph_file(path) -> list:
    path = Path(path)
    try:
        if path.suffix == _EXT[BINARY]:
            return [graph_from_bytes(path.read_bytes())]
        return [graph_from_json(line) for line in path.read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def export_graphs(graphs: Sequence[BrainGraph], out_dir, fmt: str = JSONL, manifest: Optional[dict] = None) -> dict:
    """Write one file per graph plus ``manifest.json``; returns the manifest."""
    if fmt not in _EXT:
        raise ValidationError(f"unknown export format {fmt!r}")
    out = Path(out_dir)
    entries = [{"subject_id": g.subject_id, "label": g.label, "file": write_graph(g, out, fmt)} for g in graphs]
    manifest = {**(manifest or {}), "format": fmt, "tool_version": __version__, "graphs": entries}
    try:
        (out / "manifest.json").write_text(json.dumps(jsonable(manifest), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest in {out}: {exc}") from exc
    return manifest


def read_manifest(export_dir) -> dict:
    try:
        return json.loads((Path(export_dir) / "manifest.json").read_text())
    except OSError as exc:
        raise IoError(f"no manifest in {export_dir}: {exc}") from exc


def load_graphs(export_dir) -> list:
    export_dir = Path(export_dir)
    manifest = read_manifest(export_dir)
    out = []
    for entry in manifest["graphs"]:
        out.extend(read_graph_file(export_dir / entry["file"]))
    return out


# -- splits -----------------------------------------------------------------------


def _allocate(size, proportions):
    raw = np.asarray(proportions) * size
    counts = np.floor(raw + 1e-9).astype(int)
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[: size - counts.sum()]:
        counts[k] += 1
    for k in range(len(counts)):
        if proportions[k] > 0 and counts[k] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[k] += 1
    return counts


def stratified_split(labels, proportions=DEFAULT_PROPORTIONS, seed: int = 0, names=SPLITS) -> np.ndarray:
    """Per-class proportional assignment of subjects to named splits.

    Each class is shuffled with a generator seeded from ``seed`` and cut by
    largest-remainder allocation, so every split's share of a class is within
    one subject of ``proportion * class_size``. Classes too small for that
    still give each split with a nonzero proportion at least one subject.
    """
    labels = np.asarray(labels)
    proportions = [float(p) for p in proportions]
    if len(proportions) != len(names):
        raise ValidationError(f"{len(proportions)} proportions for {len(names)} splits")
    if any(p < 0 for p in proportions) or abs(sum(proportions) - 1.0) > 1e-9:
        raise ValidationError(f"proportions must be non-negative and sum to 1, got {proportions}")
    needed = sum(p > 0 for p in proportions)
    rng = np.random.default_rng(seed)
    out = np.empty(labels.size, dtype=object)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < needed:
            raise ClassTooSmall(f"class {c!r} has {idx.size} subjects, needs {needed}")
        perm = rng.permutation(idx)
        start = 0
        for name, count in zip(names, _allocate(idx.size, proportions)):
            out[perm[start:start + count]] = name
            start += count
    return out.astype(str)


# -- synthetic data ---------------------------------------------------------------


@dataclass(frozen=True)
class Coupling:
    """Directed coupling: ``target(t) = gain * source(t - lag) + noise``."""

    source: int
    target: int
    lag: int
    gain: float = 1.0

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["source"]), int(d["target"]), int(d["lag"]), float(d.get("gain", 1.0)))


def _ar1(rng, length, n, coef):
    e = rng.standard_normal((length, n))
    x = np.empty_like(e)
    x[0] = e[0]
    for t in range(1, length):
        x[t] = coef * x[t - 1] + e[t]
    return x


def synth_lagged_dataset(
    n_subjects: int,
    n: int,
    t_count: int,
    classes: Sequence[Sequence[Coupling]],
    noise_sigma: float = 0.3,
    seed: int = 0,
    ar_coef: float = 0.5,
    burn_in: int = 50,
) -> list:
    """Subjects whose ROI signals carry class-specific lagged couplings.

    Base signals are standardized AR(1) series. A coupled target is replaced
    by the gain-weighted sum of its (pre-coupling) sources shifted by their
    lags, plus Gaussian noise of scale ``noise_sigma``. Subject ``s`` gets
    label ``s % len(classes)`` and its own child seed, so any subject can be
    regenerated independently.
    """
    classes = [[c if isinstance(c, Coupling) else Coupling.from_dict(c) for c in spec] for spec in classes]
    if not classes:
        raise InvalidSpec("need at least one class")
    if n < 2 or t_count < 3:
        raise InvalidSpec("need n >= 2 and T >= 3")
    max_lag = 0
    for spec in classes:
        for c in spec:
            if not (0 <= c.source < n and 0 <= c.target < n) or c.source == c.target:
                raise InvalidSpec(f"bad coupling endpoints {c}")
            if c.lag < 0 or c.lag >= t_count:
                raise InvalidSpec(f"coupling lag {c.lag} must be in [0, T)")
            max_lag = max(max_lag, c.lag)
    seeds = np.random.SeedSequence(seed).spawn(n_subjects)
    records = []
    for s in range(n_subjects):
        rng = np.random.default_rng(seeds[s])
        label = s % len(classes)
        ext = _ar1(rng, burn_in + max_lag + t_count, n, ar_coef)[burn_in:]
        ext = (ext - ext.mean(axis=0)) / ext.std(axis=0)
        x = ext[max_lag:].copy()
        targets = {}
        for c in classes[label]:
            shifted = c.gain * ext[max_lag - c.lag: max_lag - c.lag + t_count, c.source]
            targets[c.target] = targets.get(c.target, 0.0) + shifted
        for j, signal in sorted(targets.items()):
            x[:, j] = signal + noise_sigma * rng.standard_normal(t_count)
        records.append(SubjectRecord(f"sub-{s:04d}", BoldMatrix(x), label, "synthetic"))
    return records


def synth_from_spec(spec: dict, seed: Optional[int] = None) -> list:
    """Build a synthetic dataset from a JSON/YAML spec mapping."""
    try:
        return synth_lagged_dataset(
            int(spec["n_subjects"]),
            int(spec["n"]),
            int(spec["t"]),
            spec["classes"],
            float(spec.get("noise_sigma", 0.3)),
            int(seed if seed is not None else spec.get("seed", 0)),
            float(spec.get("ar_coef", 0.5)),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidSpec(f"malformed synth spec: {exc}") from exc
