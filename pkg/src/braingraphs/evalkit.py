"""Surrogate evaluation of design-space configurations.

These are small, deterministic classifiers standing in for GNNs, so that
configurations can be compared on desk-scale data. Every report is tagged
``"surrogate_evaluation": true``; the numbers are not GNN accuracies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .correlation import average_ranks
from .dataio import DEFAULT_PROPORTIONS, stratified_split
from .errors import MisalignedSettings, SingularSystem, ValidationError

CENTROID = "centroid"
RIDGE = "ridge"
UPPER_TRIANGLE = "upper_triangle"
MEAN_POOL = "mean_pool"
SURROGATE_MARKER = "SURROGATE EVALUATION: nearest-centroid / ridge stand-ins, not GNN accuracies"


@dataclass(frozen=True)
class SurrogateModel:
    kind: str = CENTROID
    feature_map: str = UPPER_TRIANGLE
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in (CENTROID, RIDGE):
            raise ValidationError(f"unknown surrogate {self.kind!r}")
        if self.feature_map not in (UPPER_TRIANGLE, MEAN_POOL):
            raise ValidationError(f"unknown feature map {self.feature_map!r}")


def graph_features(graph, feature_map: str = UPPER_TRIANGLE) -> np.ndarray:
    """Flatten one graph into a vector.

    ``upper_triangle`` takes the strict upper triangle of every node-feature
    block (for a lead/lag pair the two triangles together cover every
    ordered pair) and, when edge features exist, scatters each indicator
    column onto the upper triangle. ``mean_pool`` averages node-feature rows.
    """
    x = graph.node_features.values
    n = x.shape[0]
    if feature_map == MEAN_POOL:
        return x.mean(axis=0)
    iu = np.triu_indices(n, 1)
    parts = [x[:, k * n:(k + 1) * n][iu] for k in range(x.shape[1] // n)]
    ef = graph.edge_features
    if ef is not None:
        pos = {e: k for k, e in enumerate(zip(*iu))}
        dense = np.zeros((len(iu[0]), ef.values.shape[1]))
        for row, edge in enumerate(graph.adjacency.edges):
            dense[pos[edge]] = ef.values[row]
        parts.extend(dense.T)
    return np.concatenate(parts)


def feature_matrix(graphs, feature_map: str = UPPER_TRIANGLE):
    x = np.vstack([graph_features(g, feature_map) for g in graphs])
    y = np.array([g.label for g in graphs])
    return x, y


def _centroid_predict(xtr, ytr, xte):
    classes = np.unique(ytr)
    centroids = np.vstack([xtr[ytr == c].mean(axis=0) for c in classes])
    d = ((xte[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return classes[np.argmin(d, axis=1)]


def _ridge_predict(xtr, ytr, xte, lam):
    classes = np.unique(ytr)
    mu = xtr.mean(axis=0)
    sd = xtr.std(axis=0)
    sd[sd == 0] = 1.0
    a = (xtr - mu) / sd
    b = (xte - mu) / sd
    targets = (ytr[:, None] == classes[None, :]).astype(float)
    offset = targets.mean(axis=0)
    targets = targets - offset
    m, p = a.shape
    try:
        if p <= m:
            w = np.linalg.solve(a.T @ a + lam * np.eye(p), a.T @ targets)
        else:
            w = a.T @ np.linalg.solve(a @ a.T + lam * np.eye(m), targets)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        raise SingularSystem("non-finite ridge weights")
    return classes[np.argmax(b @ w + offset, axis=1)]


def fit_predict(model: SurrogateModel, train, test) -> float:
    """Fit on ``train = (X, y)`` and return accuracy on ``test = (X, y)``."""
    xtr, ytr = (np.asarray(a) for a in train)
    xte, yte = (np.asarray(a) for a in test)
    if len(np.unique(ytr)) < 2:
        raise ValidationError("training set needs at least two classes")
    if not (np.all(np.isfinite(xtr)) and np.all(np.isfinite(xte))):
        raise ValidationError("non-finite features")
    if yte.size == 0:
        raise ValidationError("empty test set")
    if model.kind == RIDGE:
        try:
            pred = _ridge_predict(xtr, ytr, xte, model.lam)
        except SingularSystem as exc:
            warnings.warn(f"ridge solve failed ({exc}); falling back to nearest centroid", stacklevel=2)
            pred = _centroid_predict(xtr, ytr, xte)
    else:
        pred = _centroid_predict(xtr, ytr, xte)
    return float(np.mean(pred == yte))


def evaluate_graphs(
    graphs,
    model: SurrogateModel = SurrogateModel(),
    n_splits: int = 5,
    seed: int = 0,
    proportions=DEFAULT_PROPORTIONS,
) -> dict:
    """Held-out (test-split) accuracy over ``n_splits`` stratified splits.

    Split ``k`` uses seed ``seed + k``, so two configurations evaluated with
    the same seed see identical partitions of the same subjects.
    """
    graphs = sorted(graphs, key=lambda g: g.subject_id)
    x, y = feature_matrix(graphs, model.feature_map)
    accs = []
    for k in range(n_splits):
        split = stratified_split(y, proportions, seed + k)
        tr, te = split == "train", split == "test"
        accs.append(fit_predict(model, (x[tr], y[tr]), (x[te], y[te])))
    return {"mean": float(np.mean(accs)), "std": float(np.std(accs)), "per_split": accs}


def rank_configs(table: Mapping[str, Mapping[str, float]]) -> dict:
    """Rank configurations per setting (1 = best accuracy; ties share the mean rank).

    ``table[setting][config]`` is an accuracy. Returns per-setting ranks and
    the average rank of every configuration across settings.
    """
    settings = list(table)
    if not settings:
        return {"per_setting": {}, "average": {}}
    configs = list(table[settings[0]])
    per_setting = {}
    for s in settings:
        if set(table[s]) != set(configs):
            raise MisalignedSettings(f"setting {s!r} has a different configuration set")
        ranks = average_ranks([-float(table[s][c]) for c in configs])
        per_setting[s] = dict(zip(configs, ranks.tolist()))
    average = {c: float(np.mean([per_setting[s][c] for s in settings])) for c in configs}
    return {"per_setting": per_setting, "average": average}


def outperformance_rate(config_acc, baseline_acc) -> float:
    """Fraction of settings where the config strictly beats the baseline.

    Accepts two equal-length sequences, or two mappings keyed by setting.
    """
    if isinstance(config_acc, Mapping) or isinstance(baseline_acc, Mapping):
        if not (isinstance(config_acc, Mapping) and isinstance(baseline_acc, Mapping)):
            raise MisalignedSettings("mix of keyed and positional accuracies")
        if set(config_acc) != set(baseline_acc):
            raise MisalignedSettings("settings differ between config and baseline")
        keys = sorted(baseline_acc)
        config_acc = [config_acc[k] for k in keys]
        baseline_acc = [baseline_acc[k] for k in keys]
    a = np.asarray(config_acc, dtype=float)
    b = np.asarray(baseline_acc, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise MisalignedSettings(f"accuracy vectors differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise MisalignedSettings("no settings")
    return float(np.mean(a > b))


def build_report(results: Mapping[str, Mapping[str, dict]], baseline: str = "baseline", model=None) -> dict:
    """Assemble the ranking table and outperformance summary.

    ``results[setting][config]`` is the dict returned by :func:`evaluate_graphs`.
    """
    table = {s: {c: r["mean"] for c, r in cfgs.items()} for s, cfgs in results.items()}
    ranking = rank_configs(table)
    settings = list(table)
    configs = list(table[settings[0]]) if settings else []
    outperf = {}
    if baseline in configs:
        base = {s: table[s][baseline] for s in settings}
        for c in configs:
            if c != baseline:
                outperf[c] = outperformance_rate({s: table[s][c] for s in settings}, base)
    return {
        "surrogate_evaluation": True,
        "note": SURROGATE_MARKER,
        "model": None if model is None else {"kind": model.kind, "feature_map": model.feature_map, "lam": model.lam},
        "baseline": baseline,
        "settings": settings,
        "configs": configs,
        "accuracy": {s: {c: dict(r) for c, r in cfgs.items()} for s, cfgs in results.items()},
        "ranks": ranking["per_setting"],
        "average_rank": ranking["average"],
        "outperformance": outperf,
    }


def format_ranking_table(report: dict, sep: str = None) -> str:
    """Settings as rows, configurations as columns, cells are ranks.

    With ``sep`` (e.g. a tab) the output is delimited instead of aligned.
    """
    configs = report["configs"]
    rows = [["setting"] + configs]
    for s in report["settings"]:
        rows.append([s] + [f"{report['ranks'][s][c]:.1f}" for c in configs])
    rows.append(["average"] + [f"{report['average_rank'][c]:.2f}" for c in configs])
    if sep is not None:
        return "\n".join(sep.join(r) for r in rows) + "\n"
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
    return "\n".join([report.get("note", SURROGATE_MARKER)] + lines) + "\n"


def format_outperformance(report: dict, sep: str = None) -> str:
    items = sorted(report["outperformance"].items(), key=lambda kv: (-kv[1], kv[0]))
    n = len(report["settings"])
    if sep is not None:
        return "config" + sep + "outperformance_rate\n" + "".join(f"{c}{sep}{r:.4f}\n" for c, r in items)
    lines = [f"Outperformance vs {report['baseline']} over {n} setting(s)"]
    width = max((len(c) for c, _ in items), default=0)
    lines += [f"{c.ljust(width)}  {r:5.2f}  {'#' * int(round(r * 20))}" for c, r in items]
    return "\n".join(lines) + "\n"


def evaluate_settings(
    settings: Mapping[str, Mapping[str, Sequence]],
    model: SurrogateModel = SurrogateModel(),
    n_splits: int = 5,
    seed: int = 0,
    baseline: str = "baseline",
) -> dict:
    """``settings[setting][config]`` is a list of graphs; returns a full report."""
    results = {
        s: {c: evaluate_graphs(graphs, model, n_splits, seed) for c, graphs in cfgs.items()}
        for s, cfgs in settings.items()
    }
    return build_report(results, baseline, model)
