"""Command line interface.

Exit codes: 0 success, 1 validation error, 2 partial failure above the
configured threshold, 3 I/O error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from . import dataio, designspace, evalkit
from .errors import BrainGraphError, IoError, PartialFailure, ValidationError
from .topology import bin_by_overlap, edge_overlap, unify_topology

log = logging.getLogger("braingraphs")


def _load_mapping(path):
    try:
        return yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_json(path, obj):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(dataio.jsonable(obj), indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def cmd_ingest(args):
    records = dataio.ingest_directory(args.src, args.layout, args.labels_file)
    manifest = dataio.save_dataset(records, args.out, args.paradigm)
    print(f"ingested {manifest['subject_count']} subjects, n={manifest['n']}, digest {manifest['digest'][:12]}")


def cmd_synth(args):
    spec = _load_mapping(args.spec)
    records = dataio.synth_from_spec(spec, args.seed)
    manifest = dataio.save_dataset(records, args.out, spec.get("paradigm", "rest"))
    print(f"generated {manifest['subject_count']} subjects, digest {manifest['digest'][:12]}")


def _dataset(path):
    return dataio.load_dataset(path), dataio.dataset_info(path).get("paradigm", "rest")


def _check_runs(runs):
    failed = [r.config.name for r in runs if r.status != "ok"]
    for r in runs:
        print(f"{r.config.name:<24} {r.status:<7} {len(r.failures)} failures  {r.out_dir}")
    if failed:
        raise PartialFailure(f"configs above the failure threshold: {', '.join(failed)}")


def cmd_build(args):
    if args.config:
        config = designspace.load_config(args.config)
    else:
        config = designspace.preset(args.preset)
    subjects, paradigm = _dataset(args.input)
    run = designspace.run_config(
        subjects, config, args.out, args.format,
        designspace.resolve_workers(args.workers), failure_threshold=args.failure_threshold,
        paradigm=paradigm,
    )
    _check_runs([run])


def cmd_sweep(args):
    grid, options = designspace.load_grid(args.grid)
    subjects, paradigm = _dataset(args.input)
    # grid file settings win over the environment; explicit flags win over both
    workers = designspace.resolve_workers(args.workers, options.get("workers"))
    runs = designspace.run_sweep(
        subjects, grid, args.out,
        args.format or options.get("format", dataio.JSONL),
        workers,
        args.resume,
        args.failure_threshold if args.failure_threshold is not None else options.get("failure_threshold", 0.1),
        options.get("split_seed", 0),
        paradigm,
    )
    _check_runs(runs)


def cmd_unify(args):
    graphs = dataio.load_graphs(args.input)
    adjs = [g.adjacency for g in graphs]
    unified = unify_topology(adjs, args.proportion)
    scores = [edge_overlap(a, unified.adjacency) for a in adjs]
    edges = [float(e) for e in args.bins.split(",")]
    bins = bin_by_overlap(scores, edges, args.merge_below)
    out = {
        **unified.summary(),
        "proportion": args.proportion,
        "edges": [list(e) for e in unified.adjacency.edges],
        "subjects": [
            {"subject_id": g.subject_id, "label": g.label, "overlap": s, "bin": b}
            for g, s, b in zip(graphs, scores, bins)
        ],
        "bin_edges": edges,
        "merge_below": args.merge_below,
    }
    _write_json(args.out, out)
    print(f"unified topology: {len(unified.adjacency)} edges, k_threshold={unified.k_threshold}")


def _settings(dirs):
    out = {}
    for spec in dirs:
        name, _, path = spec.rpartition("=")
        path = Path(path)
        out[name or path.name] = path
    return out


def _config_dirs(sweep_dir):
    summary_path = sweep_dir / "sweep.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        return {c["name"]: sweep_dir / c["dir"] for c in summary["configs"] if c["status"] == "ok"}
    if (sweep_dir / "manifest.json").exists():
        m = dataio.read_manifest(sweep_dir)
        return {m.get("config_name", sweep_dir.name): sweep_dir}
    raise IoError(f"{sweep_dir} holds neither sweep.json nor manifest.json")


def cmd_eval(args):
    model = evalkit.SurrogateModel(
        {"centroid": evalkit.CENTROID, "ridge": evalkit.RIDGE}[args.model], args.feature_map, args.lam
    )
    wanted = [c for c in args.configs.split(",") if c] if args.configs else None
    settings = {}
    for name, path in _settings(args.dataset_dir).items():
        dirs = _config_dirs(path)
        names = wanted or list(dirs)
        missing = [c for c in names if c not in dirs]
        if missing:
            raise ValidationError(f"setting {name!r} lacks configs {missing}")
        settings[name] = {c: dataio.load_graphs(dirs[c]) for c in names}
    report = evalkit.evaluate_settings(settings, model, args.splits, args.seed, args.baseline)
    _write_json(args.out, report)
    print(evalkit.format_ranking_table(report))
    if report["outperformance"]:
        print(evalkit.format_outperformance(report))


def cmd_report(args):
    from .plotting import plot_outperformance, plot_ranking

    try:
        report = json.loads(Path(args.eval).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {args.eval}: {exc}") from exc
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "ranking.tsv").write_text(evalkit.format_ranking_table(report, sep="\t"))
        (out / "outperformance.tsv").write_text(evalkit.format_outperformance(report, sep="\t"))
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    plot_ranking(report, out / f"ranking.{args.fig_format}")
    plot_outperformance(report, out / f"outperformance.{args.fig_format}")
    print(evalkit.format_ranking_table(report))
    print(f"report written to {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="braingraphs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate ROI CSV tables into a dataset directory")
    s.add_argument("src", help="directory of per-subject CSV files")
    s.add_argument("--out", required=True)
    s.add_argument("--layout", choices=[dataio.TIME_BY_ROI, dataio.ROI_BY_TIME], default=dataio.TIME_BY_ROI)
    s.add_argument("--labels-file")
    s.add_argument("--paradigm", choices=["rest", "task"], default="rest")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate a synthetic lag-coupled dataset")
    s.add_argument("--spec", required=True, help="YAML/JSON synth spec")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build", help="build graphs for one configuration")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--preset", choices=sorted(designspace.PRESETS))
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=[dataio.JSONL, dataio.BINARY], default=dataio.JSONL)
    s.add_argument("--workers", type=int)
    s.add_argument("--failure-threshold", type=float, default=0.1)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("sweep", help="build graphs for every configuration of a grid")
    s.add_argument("--grid", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=[dataio.JSONL, dataio.BINARY])
    s.add_argument("--resume", action="store_true")
    s.add_argument("--workers", type=int)
    s.add_argument("--failure-threshold", type=float)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("unify", help="unified topology and overlap bins for exported graphs")
    s.add_argument("--in", dest="input", required=True, help="graph export directory")
    s.add_argument("--proportion", type=float, default=0.05)
    s.add_argument("--bins", default="0,0.25,0.5,0.75,1")
    s.add_argument("--merge-below", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_unify)

    s = sub.add_parser("eval", help="surrogate evaluation of exported configurations")
    s.add_argument("--dataset-dir", action="append", required=True,
                   help="sweep output directory, optionally NAME=PATH; repeat for more settings")
    s.add_argument("--configs", help="comma-separated config names (default: all)")
    s.add_argument("--model", choices=["centroid", "ridge"], default="centroid")
    s.add_argument("--feature-map", choices=[evalkit.UPPER_TRIANGLE, evalkit.MEAN_POOL], default=evalkit.UPPER_TRIANGLE)
    s.add_argument("--lam", type=float, default=1.0)
    s.add_argument("--splits", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--baseline", default="baseline")
    s.add_argument("--out", default="eval.json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="delimited tables and figures from an eval report")
    s.add_argument("--eval", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fig-format", default="png")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except BrainGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except yaml.YAMLError as exc:
        print(f"error: malformed YAML: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
