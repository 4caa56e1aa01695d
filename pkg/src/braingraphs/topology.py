"""Binary adjacencies from FC matrices.

Subject-specific graphs keep the strongest positive correlations. The unified
topology keeps the edges that occur most often across subjects, with the
occurrence threshold chosen so the edge budget is not exceeded.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .correlation import FcMatrix, symmetrize_max
from .errors import NoPositiveEdges, ShapeMismatch, ValidationError

MERGED = -1


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def edge_budget(fraction: float, n: int) -> int:
    """``floor(fraction * n(n-1)/2)``, robust to float noise such as 0.05 * 4950."""
    return int(math.floor(fraction * pair_count(n) + 1e-9))


@dataclass(frozen=True)
class Adjacency:
    """Undirected simple graph stored as sorted ``(i, j)`` pairs with ``i < j``."""

    n: int
    edges: tuple
    density_target: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        edges = tuple(sorted({(min(int(i), int(j)), max(int(i), int(j))) for i, j in self.edges}))
        for i, j in edges:
            if i == j:
                raise ValidationError(f"self-loop on node {i}")
            if not 0 <= i < j < self.n:
                raise ValidationError(f"edge {(i, j)} out of range for n={self.n}")
        object.__setattr__(self, "edges", edges)

    def __len__(self):
        return len(self.edges)

    @property
    def edge_set(self) -> frozenset:
        return frozenset(self.edges)

    def to_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int8)
        if self.edges:
            i, j = np.array(self.edges).T
            a[i, j] = 1
            a[j, i] = 1
        return a

    @classmethod
    def from_matrix(cls, a, density_target=None) -> "Adjacency":
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeMismatch(f"adjacency must be square, got {a.shape}")
        i, j = np.nonzero(np.triu(a, 1))
        return cls(a.shape[0], tuple(zip(i.tolist(), j.tolist())), density_target)


@dataclass(frozen=True)
class UnifiedTopology:
    adjacency: Adjacency
    k_threshold: int
    subject_count: int
    edge_frequency: dict

    def summary(self) -> dict:
        return {
            "k_threshold": self.k_threshold,
            "subject_count": self.subject_count,
            "edge_count": len(self.adjacency),
            "budget": self.adjacency.meta.get("budget"),
        }


def _upper_values(values):
    i, j = np.triu_indices(values.shape[0], 1)
    return i, j, values[i, j]


def top_positive_cut(values: np.ndarray, fraction: float):
    """Locate the cut for keeping the top ``fraction`` of positive upper-triangle entries.

    Returns ``(cut, rho, shortfall)`` where every kept entry is ``>= cut``
    and ``rho`` is the largest positive entry that is *not* kept (``0.0``
    if none), so ``value > rho`` selects exactly the kept set.
    """
    _, _, vals = _upper_values(np.asarray(values))
    pos = np.sort(vals[vals > 0])[::-1]
    if pos.size == 0:
        raise NoPositiveEdges("FC matrix has no positive off-diagonal entry")
    k = edge_budget(fraction, values.shape[0])
    if k == 0:
        return math.inf, float(pos[0]), 0
    if pos.size <= k:
        return float(pos[-1]), 0.0, k - pos.size
    cut = float(pos[k - 1])
    below = pos[pos < cut]
    return cut, float(below[0]) if below.size else 0.0, 0


def sparsify_top_positive(fc, fraction: float = 0.05) -> Adjacency:
    """Keep the strongest positive correlations.

    The budget is ``floor(fraction * n(n-1)/2)`` edges. Edges tied with the
    last kept value are all kept and counted in ``meta["tie_surplus"]``.
    Lagged (asymmetric) matrices are max-symmetrized first.
    """
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    meta = {}
    if isinstance(fc, FcMatrix):
        if not fc.view.symmetric:
            fc = symmetrize_max(fc)
            meta["symmetrized"] = "max"
            meta["experimental"] = True
        values = fc.values
    else:
        values = np.asarray(fc, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ShapeMismatch(f"FC matrix must be square, got {values.shape}")
    if not np.array_equal(values, values.T):
        raise ValidationError("FC matrix is not symmetric")
    n = values.shape[0]
    cut, rho, shortfall = top_positive_cut(values, fraction)
    i, j, vals = _upper_values(values)
    keep = (vals > 0) & (vals >= cut)
    budget = edge_budget(fraction, n)
    meta.update(
        budget=budget,
        cut_value=cut if math.isfinite(cut) else None,
        rho=rho,
        tie_surplus=max(0, int(keep.sum()) - budget),
    )
    if shortfall:
        meta["shortfall"] = shortfall
        warnings.warn(
            f"only {budget - shortfall} positive entries for a budget of {budget}", stacklevel=2
        )
    if budget == 0:
        warnings.warn("edge budget is 0 for this fraction and node count", stacklevel=2)
    edges = tuple(zip(i[keep].tolist(), j[keep].tolist()))
    return Adjacency(n, edges, fraction, meta)


def edge_frequency(adjacencies: Sequence[Adjacency]) -> Counter:
    counts = Counter()
    for a in adjacencies:
        counts.update(a.edges)
    return counts


def unify_topology(
    adjacencies: Sequence[Adjacency],
    proportion: float = 0.05,
    strengths: Optional[Sequence[np.ndarray]] = None,
    fill_budget: bool = False,
) -> UnifiedTopology:
    """Aggregate subject adjacencies into one shared topology.

    ``k_threshold`` is the smallest occurrence count for which the edges
    seen in at least ``k_threshold`` subjects fit within
    ``floor(proportion * n(n-1)/2)``. With ``fill_budget=True`` the leftover
    budget is topped up from the edges one count below the threshold,
    preferring higher mean ``|correlation|`` across ``strengths`` and then
    lexicographic order; those edges are listed in ``meta["filled"]``.
    """
    adjacencies = list(adjacencies)
    if len(adjacencies) < 2:
        raise ValidationError("unify_topology needs at least two subjects")
    if not 0 < proportion <= 1:
        raise ValidationError(f"proportion must be in (0, 1], got {proportion}")
    n = adjacencies[0].n
    if any(a.n != n for a in adjacencies):
        raise ShapeMismatch("adjacencies have different node counts")
    freq = edge_frequency(adjacencies)
    n_subjects = len(adjacencies)
    budget = edge_budget(proportion, n)

    # histogram scan: at_least[k] = number of edges with frequency >= k
    hist = np.bincount(np.fromiter(freq.values(), dtype=np.int64, count=len(freq)),
                       minlength=n_subjects + 2)
    at_least = np.cumsum(hist[::-1])[::-1]
    k = next(k for k in range(1, n_subjects + 2) if at_least[k] <= budget)
    chosen = [e for e, f in freq.items() if f >= k]
    meta = {"budget": budget}

    if fill_budget and len(chosen) < budget and k > 1:
        candidates = [e for e, f in freq.items() if f == k - 1]
        if strengths is not None:
            mag = np.mean([np.abs(np.asarray(s)) for s in strengths], axis=0)
            candidates.sort(key=lambda e: (-mag[e[0], e[1]], e))
        else:
            candidates.sort()
        extra = candidates[: budget - len(chosen)]
        chosen += extra
        meta["filled"] = sorted(extra)

    adj = Adjacency(n, tuple(chosen), proportion, meta)
    return UnifiedTopology(adj, int(k), n_subjects, dict(sorted(freq.items())))


def edge_overlap(a: Adjacency, b: Adjacency) -> float:
    """Jaccard index of the two edge sets; 1.0 when both are empty."""
    if a.n != b.n:
        raise ShapeMismatch(f"node counts differ: {a.n} vs {b.n}")
    ea, eb = a.edge_set, b.edge_set
    union = ea | eb
    if not union:
        return 1.0
    return len(ea & eb) / len(union)


def bin_by_overlap(scores, bin_edges, merge_below: Optional[float] = None) -> list:
    """Assign each score to a bin ``[edges[k], edges[k+1])``; the last bin is closed.

    Bins whose upper edge is ``<= merge_below`` are collapsed into the single
    label :data:`MERGED`.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin_edges must be strictly increasing with >= 2 entries")
    out = []
    for s in scores:
        k = int(np.searchsorted(edges, s, side="right")) - 1
        k = min(max(k, 0), edges.size - 2)
        if merge_below is not None and edges[k + 1] <= merge_below + 1e-12:
            k = MERGED
        out.append(k)
    return out
