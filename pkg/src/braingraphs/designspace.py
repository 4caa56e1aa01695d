"""Design-space configurations and the per-subject construction pipeline.

A :class:`DesignConfig` fixes one choice along each axis: signal retention,
correlation views used as node features, topology (subject-specific or
unified), edge features, and whether rank/lagged views see the retained or
the plain z-scored signal.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .correlation import CROSSCORR, KENDALL, PEARSON, SPEARMAN, View, fc_matrix
from .dataio import (
    JSONL,
    DEFAULT_PROPORTIONS,
    SubjectRecord,
    dataset_digest,
    export_graphs,
    jsonable,
    stratified_split,
)
from .errors import (
    BrainGraphError,
    ClassTooSmall,
    IoError,
    StageError,
    ValidationError,
)
from .featurize import BrainGraph, build_edge_features, concat_node_features
from .signal import RetentionSpec, retain_high_amplitude, z_normalize
from .topology import Adjacency, UnifiedTopology, sparsify_top_positive, unify_topology

log = logging.getLogger(__name__)

RETAIN_THEN_CORRELATE = "retain_then_correlate"
CORRELATE_RAW = "correlate_raw"
SUBJECT = "subject"
UNIFIED = "unified"
WORKERS_ENV = "BRAINGRAPHS_WORKERS"


def _views(items):
    return tuple(v if isinstance(v, View) else View.parse(v) for v in items)


@dataclass(frozen=True)
class DesignConfig:
    name: str = "baseline"
    retention: Optional[RetentionSpec] = None
    node_views: tuple = (View(PEARSON),)
    topology: str = SUBJECT
    topology_view: View = View(PEARSON)
    fraction: float = 0.05
    proportion: float = 0.05
    edge_views: tuple = ()
    rho: Optional[tuple] = None
    stage_order: str = RETAIN_THEN_CORRELATE
    on_constant: str = "abort"
    unified_on_task: bool = False

    def __post_init__(self):
        object.__setattr__(self, "node_views", _views(self.node_views))
        object.__setattr__(self, "edge_views", _views(self.edge_views))
        if not isinstance(self.topology_view, View):
            object.__setattr__(self, "topology_view", View.parse(self.topology_view))
        if self.rho is not None:
            object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        self.validate()

    def validate(self):
        if not self.node_views:
            raise ValidationError("a configuration needs at least one node-feature view")
        if self.topology not in (SUBJECT, UNIFIED):
            raise ValidationError(f"unknown topology mode {self.topology!r}")
        for value, what in ((self.fraction, "fraction"), (self.proportion, "proportion")):
            if not 0 < value <= 1:
                raise ValidationError(f"{what} must be in (0, 1], got {value}")
        if self.stage_order not in (RETAIN_THEN_CORRELATE, CORRELATE_RAW):
            raise ValidationError(f"unknown stage order {self.stage_order!r}")
        if self.on_constant not in ("abort", "drop"):
            raise ValidationError(f"on_constant must be 'abort' or 'drop', got {self.on_constant!r}")
        if self.edge_views:
            if self.topology_view != View(PEARSON):
                raise ValidationError("edge features are defined on the Pearson topology")
            if self.rho is not None and len(self.rho) != len(self.edge_views):
                raise ValidationError("rho must have one threshold per edge-feature view")

    def semantic_dict(self) -> dict:
        """Every field that affects the output; the name is excluded."""
        return {
            "retention": self.retention.to_dict() if self.retention else None,
            "node_views": [v.name for v in self.node_views],
            "topology": {
                "mode": self.topology,
                "view": self.topology_view.name,
                "fraction": self.fraction,
                "proportion": self.proportion if self.topology == UNIFIED else None,
                "unified_on_task": self.unified_on_task if self.topology == UNIFIED else None,
            },
            "edge_features": {"views": [v.name for v in self.edge_views], "rho": list(self.rho) if self.rho else None}
            if self.edge_views
            else None,
            "stage_order": self.stage_order if self.retention else None,
            "on_constant": self.on_constant,
        }

    def to_dict(self) -> dict:
        return {"name": self.name, **self.semantic_dict()}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "DesignConfig":
        """Build from a nested mapping; ``preset`` names a starting point."""
        d = dict(d)
        base = preset(d.pop("preset")) if "preset" in d else cls()
        kw = {}
        if "name" in d:
            kw["name"] = str(d.pop("name"))
        if "retention" in d:
            r = d.pop("retention")
            if r in (None, "none"):
                kw["retention"] = None
            elif isinstance(r, str):
                kw["retention"] = RetentionSpec.parse(r)
            else:
                kw["retention"] = RetentionSpec.from_dict(r)
        for key in ("views", "node_views"):
            if key in d:
                kw["node_views"] = _views(d.pop(key))
        if "topology" in d:
            t = d.pop("topology")
            t = {"mode": t} if isinstance(t, str) else dict(t)
            if "mode" in t:
                kw["topology"] = t.pop("mode")
            if "view" in t:
                kw["topology_view"] = View.parse(t.pop("view"))
            for key in ("fraction", "proportion"):
                if t.get(key) is not None:
                    kw[key] = float(t.pop(key))
            if t.get("unified_on_task") is not None:
                kw["unified_on_task"] = bool(t.pop("unified_on_task"))
        if "edge_features" in d:
            ef = d.pop("edge_features")
            if ef in (None, False):
                kw["edge_views"], kw["rho"] = (), None
            elif ef is True:
                kw["edge_views"] = _views((PEARSON, SPEARMAN, KENDALL))
            else:
                kw["edge_views"] = _views(ef.get("views", (PEARSON, SPEARMAN, KENDALL)))
                kw["rho"] = ef.get("rho")
        for key in ("stage_order", "on_constant"):
            if d.get(key) is not None:
                kw[key] = d.pop(key)
            d.pop(key, None)
        if d:
            raise ValidationError(f"unknown configuration keys: {sorted(d)}")
        return replace(base, **kw)


# -- presets ------------------------------------------------------------------------


def _lag_views(lag):
    return (View(PEARSON), View(CROSSCORR, lag), View(CROSSCORR, -lag))


_RANK_EDGE_VIEWS = (View(PEARSON), View(SPEARMAN), View(KENDALL))


def _build_presets():
    base = DesignConfig()
    out = {"baseline": base}
    for alpha_name, spec in (
        ("p30-g0", RetentionSpec.percentile(30, False)),
        ("p30-g1", RetentionSpec.percentile(30, True)),
        ("sd1-g0", RetentionSpec.stddev(1, False)),
        ("sd1-g1", RetentionSpec.stddev(1, True)),
    ):
        out[alpha_name] = replace(base, name=alpha_name, retention=spec, stage_order=RETAIN_THEN_CORRELATE)
    for metric in (SPEARMAN, KENDALL):
        out[metric] = replace(base, name=metric, node_views=(View(metric),), topology_view=View(metric))
    for lag in (1, 5):
        out[f"lag{lag}"] = replace(base, name=f"lag{lag}", node_views=_lag_views(lag))
        out[f"ef-lag{lag}"] = replace(
            base, name=f"ef-lag{lag}", node_views=_lag_views(lag), edge_views=_RANK_EDGE_VIEWS
        )
        out[f"multiview-lag{lag}"] = replace(
            base,
            name=f"multiview-lag{lag}",
            node_views=_RANK_EDGE_VIEWS + (View(CROSSCORR, lag), View(CROSSCORR, -lag)),
        )
    out["edgefeat"] = replace(base, name="edgefeat", edge_views=_RANK_EDGE_VIEWS)
    out["unified"] = replace(base, name="unified", topology=UNIFIED)
    return out


PRESETS = _build_presets()

#: column order of the ranking table
RANKING_PRESETS = (
    "baseline",
    "p30-g0",
    "p30-g1",
    "sd1-g0",
    "sd1-g1",
    "spearman",
    "kendall",
    "lag1",
    "lag5",
    "edgefeat",
    "ef-lag1",
    "ef-lag5",
)


def preset(name: str) -> DesignConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config(path) -> DesignConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    return DesignConfig.from_dict(data or {})


# -- grids ------------------------------------------------------------------------

_AXES = ("edge_features", "fraction", "lag", "metric", "proportion", "retention", "stage_order", "topology")


@dataclass
class SweepGrid:
    """Cartesian product of axis values, plus optional named presets.

    Axis names: ``retention`` (``none`` or ``p30-g0``-style names), ``metric``,
    ``lag`` (0 for none), ``topology`` (``subject``/``unified``),
    ``edge_features`` (bool), ``stage_order``, ``fraction``, ``proportion``.
    Axes are expanded in sorted name order. Combinations that are invalid or
    listed in ``exclude`` are dropped and reported in ``excluded``.
    """

    axes: dict = field(default_factory=dict)
    presets: list = field(default_factory=list)
    exclude: list = field(default_factory=list)
    base: DesignConfig = field(default_factory=DesignConfig)
    resolved: list = field(default_factory=list, init=False)
    excluded: list = field(default_factory=list, init=False)

    def __post_init__(self):
        unknown = set(self.axes) - set(_AXES)
        if unknown:
            raise ValidationError(f"unknown grid axes {sorted(unknown)}")
        self.resolve()

    def _apply(self, point):
        cfg = self.base
        metric = point.get("metric", cfg.topology_view.metric)
        lag = int(point.get("lag", 0))
        views = (View(metric),) + ((View(CROSSCORR, lag), View(CROSSCORR, -lag)) if lag else ())
        kw = {"node_views": views, "topology_view": View(metric)}
        if "retention" in point:
            r = point["retention"]
            kw["retention"] = None if r in (None, "none") else RetentionSpec.parse(r)
        if "topology" in point:
            kw["topology"] = point["topology"]
        if point.get("edge_features"):
            kw["edge_views"] = _RANK_EDGE_VIEWS
        elif "edge_features" in point:
            kw["edge_views"] = ()
        for key in ("stage_order", "fraction", "proportion"):
            if key in point:
                kw[key] = point[key]
        name = "_".join(f"{k}-{point[k]}" for k in sorted(point)) or "base"
        return replace(cfg, name=name, **kw)

    def resolve(self) -> list:
        self.resolved, self.excluded = [], []
        seen = set()

        def add(cfg):
            if cfg.config_hash not in seen:
                seen.add(cfg.config_hash)
                self.resolved.append(cfg)

        for p in self.presets:
            add(preset(p))
        names = sorted(self.axes)
        if names:
            for values in itertools.product(*(self.axes[k] for k in names)):
                point = dict(zip(names, values))
                if any(all(point.get(k) == v for k, v in ex.items()) for ex in self.exclude):
                    self.excluded.append({"point": point, "reason": "excluded"})
                    continue
                try:
                    add(self._apply(point))
                except ValidationError as exc:
                    self.excluded.append({"point": point, "reason": str(exc)})
        return self.resolved

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        base = DesignConfig.from_dict(d["base"]) if d.get("base") else DesignConfig()
        return cls(dict(d.get("axes") or {}), list(d.get("presets") or []), list(d.get("exclude") or []), base)


def load_grid(path):
    """Return ``(grid, options)``; options are the grid file's run settings."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise IoError(f"cannot read grid {path}: {exc}") from exc
    options = {k: data.pop(k) for k in ("workers", "format", "failure_threshold", "split_seed") if k in data}
    return SweepGrid.from_dict(data), options


# -- pipeline -----------------------------------------------------------------------


class _Signals:
    """Lazily computed FC matrices for one subject under one config."""

    def __init__(self, z, retained, config):
        self.z = z
        self.retained = retained
        self.config = config
        self.cache = {}

    def source(self, view):
        if self.retained is None:
            return self.z
        if self.config.stage_order == CORRELATE_RAW and view != View(PEARSON):
            return self.z
        return self.retained

    def fc(self, view):
        if view not in self.cache:
            self.cache[view] = fc_matrix(self.source(view), view)
        return self.cache[view]


def _prepare(bold, config):
    z = z_normalize(bold, config.on_constant)
    retained = retain_high_amplitude(z, config.retention) if config.retention else None
    return z, retained


def _stage(subject_id, stage, fn, *args):
    try:
        return fn(*args)
    except BrainGraphError as exc:
        raise StageError(subject_id, stage, exc) from exc


def subject_adjacency(subject: SubjectRecord, config: DesignConfig) -> Adjacency:
    """The subject-specific topology used as input to unification."""
    z, retained = _stage(subject.subject_id, "signal", _prepare, subject.bold, config)
    signals = _Signals(z, retained, config)
    fc = _stage(subject.subject_id, "correlation", signals.fc, config.topology_view)
    return _stage(subject.subject_id, "topology", sparsify_top_positive, fc, config.fraction)


def build_graph(subject: SubjectRecord, config: DesignConfig, unified: Optional[Adjacency] = None) -> BrainGraph:
    """Run every stage for one subject.

    For unified-topology configs pass the shared adjacency as ``unified``.
    Stage bookkeeping (thresholds, tie surplus, clamping, warnings) ends up
    in ``graph.meta``.
    """
    sid = subject.subject_id
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        z, retained = _stage(sid, "signal", _prepare, subject.bold, config)
        signals = _Signals(z, retained, config)

        if config.topology == UNIFIED:
            if unified is None:
                raise StageError(sid, "topology", ValidationError("unified config needs the shared adjacency"))
            if unified.n != z.roi_count:
                raise StageError(sid, "topology", ValidationError("unified adjacency node count differs"))
            adjacency = unified
        else:
            fc = _stage(sid, "correlation", signals.fc, config.topology_view)
            adjacency = _stage(sid, "topology", sparsify_top_positive, fc, config.fraction)

        node_fcs = [_stage(sid, "correlation", signals.fc, v) for v in config.node_views]
        x = _stage(sid, "featurize", concat_node_features, node_fcs)
        ef = None
        if config.edge_views:
            edge_fcs = [_stage(sid, "correlation", signals.fc, v) for v in config.edge_views]
            ef = _stage(sid, "featurize", build_edge_features, adjacency, edge_fcs, config.rho, config.fraction)

    meta = {
        "config": config.name,
        "config_hash": config.config_hash,
        "topology": {
            "mode": config.topology,
            "view": config.topology_view.name,
            "density_target": adjacency.density_target,
            **{k: v for k, v in adjacency.meta.items() if k != "filled"},
        },
    }
    if retained is not None:
        meta["retention"] = retained.meta["retention"]
        meta["stage_order"] = config.stage_order
    if z.meta.get("dropped_rois"):
        meta["dropped_rois"] = z.meta["dropped_rois"]
        meta["kept_rois"] = list(z.kept)
    clamps = {v.name: fc.meta["clamp"] for v, fc in signals.cache.items() if "clamp" in fc.meta}
    if clamps:
        meta["clamp"] = clamps
    if caught:
        meta["warnings"] = sorted({str(w.message) for w in caught})
    return BrainGraph(sid, adjacency, x, ef, subject.label, jsonable(meta))


def resolve_workers(explicit=None, file_value=None) -> int:
    """Explicit argument, then config file, then ``BRAINGRAPHS_WORKERS``, then 1."""
    for value in (explicit, file_value, os.environ.get(WORKERS_ENV)):
        if value not in (None, ""):
            return max(1, int(value))
    return 1


def _guarded(fn, subject, *args):
    try:
        return fn(subject, *args), None
    except StageError as exc:
        return None, {"subject_id": exc.subject_id, "stage": exc.stage, "error": str(exc.cause)}
    except BrainGraphError as exc:
        return None, {"subject_id": subject.subject_id, "stage": "unknown", "error": str(exc)}


def _map(fn, subjects, workers, *args):
    if workers <= 1 or len(subjects) <= 1:
        return [_guarded(fn, s, *args) for s in subjects]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(subjects) // (4 * workers))
        return list(pool.map(partial(_guarded_star, fn, args), subjects, chunksize=chunk))


def _guarded_star(fn, args, subject):
    return _guarded(fn, subject, *args)


@dataclass
class ConfigRun:
    config: DesignConfig
    out_dir: Path
    status: str
    graphs: list
    failures: list
    unified: Optional[UnifiedTopology] = None
    skipped: bool = False


def _split_assignment(subjects, seed):
    labels = [s.label for s in subjects]
    if any(lab is None for lab in labels):
        return None
    try:
        splits = stratified_split(labels, DEFAULT_PROPORTIONS, seed)
    except ClassTooSmall as exc:
        log.warning("no stratified split: %s", exc)
        return None
    return {s.subject_id: str(k) for s, k in zip(subjects, splits)}


def config_dir_name(config: DesignConfig) -> str:
    return f"{config.name}-{config.config_hash[:10]}"


def run_config(
    subjects: Sequence[SubjectRecord],
    config: DesignConfig,
    out_dir,
    fmt: str = JSONL,
    workers: int = 1,
    resume: bool = False,
    failure_threshold: float = 0.1,
    split_seed: int = 0,
    paradigm: str = "rest",
    digest: Optional[str] = None,
) -> ConfigRun:
    """Build and export every subject's graph for one configuration."""
    out = Path(out_dir)
    digest = digest or dataset_digest(subjects)
    manifest_path = out / "manifest.json"
    if resume and manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if (
            old.get("config_hash") == config.config_hash
            and old.get("dataset_digest") == digest
            and old.get("format") == fmt
            and old.get("status") == "ok"
        ):
            return ConfigRun(config, out, "ok", [], old.get("failures", []), skipped=True)

    subjects = list(subjects)
    failures = []
    unified = None
    unified_adj = None
    extra = {}
    if config.topology == UNIFIED:
        if paradigm == "task" and not config.unified_on_task:
            raise ValidationError(
                f"config {config.name!r}: unified topology is limited to resting-state data "
                "(set topology.unified_on_task to override)"
            )
        results = _map(subject_adjacency, subjects, workers, config)
        adjs = [a for a, _ in results if a is not None]
        failures += [f for _, f in results if f is not None]
        if len(adjs) >= 2:
            unified = unify_topology(adjs, config.proportion)
            unified_adj = unified.adjacency
            extra["unified"] = unified.summary()
        else:
            failures += [
                {"subject_id": s.subject_id, "stage": "unify", "error": "too few subject adjacencies"}
                for s in subjects
                if s.subject_id not in {f["subject_id"] for f in failures}
            ]

    graphs = []
    if unified_adj is not None or config.topology == SUBJECT:
        failed_ids = {f["subject_id"] for f in failures}
        todo = [s for s in subjects if s.subject_id not in failed_ids]
        for g, f in _map(build_graph, todo, workers, config, unified_adj):
            if g is not None:
                graphs.append(g)
            else:
                failures.append(f)
    status = "failed" if len(failures) > failure_threshold * len(subjects) else "ok"
    ts = sorted({s.bold.t_count for s in subjects})
    manifest = {
        "config_name": config.name,
        "config": config.to_dict(),
        "config_hash": config.config_hash,
        "dataset_digest": digest,
        "subject_count": len(subjects),
        "n": subjects[0].bold.roi_count if subjects else 0,
        "t": ts[0] if len(ts) == 1 else [s.bold.t_count for s in subjects],
        "split": _split_assignment([s for s in subjects if s.subject_id in {g.subject_id for g in graphs}], split_seed),
        "split_proportions": dict(zip(("train", "test", "val"), DEFAULT_PROPORTIONS)),
        "split_seed": split_seed,
        "failures": failures,
        "warnings": {g.subject_id: g.meta["warnings"] for g in graphs if g.meta.get("warnings")},
        "status": status,
        **extra,
    }
    export_graphs(graphs, out, fmt, manifest)
    return ConfigRun(config, out, status, graphs, failures, unified)


def run_sweep(
    subjects: Sequence[SubjectRecord],
    grid,
    out_dir,
    fmt: str = JSONL,
    workers: int = 1,
    resume: bool = False,
    failure_threshold: float = 0.1,
    split_seed: int = 0,
    paradigm: str = "rest",
) -> list:
    """Run every configuration of ``grid`` (a :class:`SweepGrid` or config list).

    Each configuration is exported under ``<out_dir>/<name>-<hash>/`` and a
    summary is written to ``<out_dir>/sweep.json``.
    """
    configs = grid.resolved if isinstance(grid, SweepGrid) else list(grid)
    out = Path(out_dir)
    digest = dataset_digest(subjects)
    runs = []
    for cfg in configs:
        run = run_config(
            subjects, cfg, out / config_dir_name(cfg), fmt, workers, resume,
            failure_threshold, split_seed, paradigm, digest,
        )
        log.info("%s: %s (%d failures)%s", cfg.name, run.status, len(run.failures), " [resumed]" if run.skipped else "")
        runs.append(run)
    summary = {
        "dataset_digest": digest,
        "format": fmt,
        "configs": [
            {
                "name": r.config.name,
                "config_hash": r.config.config_hash,
                "dir": r.out_dir.name,
                "status": r.status,
                "failures": len(r.failures),
            }
            for r in runs
        ],
        "excluded": grid.excluded if isinstance(grid, SweepGrid) else [],
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps(jsonable(summary), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write sweep summary: {exc}") from exc
    return runs
