"""Node and edge features for brain graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .correlation import CROSSCORR, PEARSON, FcMatrix, View, fc_matrix
from .errors import LagTooLarge, MissingPearsonView, ShapeMismatch, ValidationError
from .topology import Adjacency, top_positive_cut

DEFAULT_RHO_FRACTION = 0.05


@dataclass(frozen=True)
class NodeFeatures:
    """``n x (d' n)`` matrix; block ``k`` is the FC matrix of ``views[k]``."""

    values: np.ndarray
    views: tuple

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def block(self, k: int) -> np.ndarray:
        n = self.values.shape[0]
        return self.values[:, k * n:(k + 1) * n]


@dataclass(frozen=True)
class EdgeFeatures:
    """``|E| x d'`` indicator matrix, rows in the adjacency's sorted edge order."""

    values: np.ndarray
    views: tuple
    rho: tuple


@dataclass
class BrainGraph:
    subject_id: str
    adjacency: Adjacency
    node_features: NodeFeatures
    edge_features: Optional[EdgeFeatures] = None
    label: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.adjacency.n

    def __post_init__(self):
        if self.node_features.values.shape[0] != self.adjacency.n:
            raise ShapeMismatch("node feature rows do not match node count")
        if self.edge_features is not None and self.edge_features.values.shape[0] != len(self.adjacency):
            raise ShapeMismatch("edge feature rows do not match edge count")


def _check_same_n(fcs):
    if not fcs:
        raise ValidationError("need at least one FC matrix")
    n = fcs[0].values.shape[0]
    for fc in fcs:
        if fc.values.shape != (n, n):
            raise ShapeMismatch(f"FC shapes differ: {fc.values.shape} vs {(n, n)}")
    return n


def concat_node_features(fcs: Sequence[FcMatrix]) -> NodeFeatures:
    fcs = list(fcs)
    _check_same_n(fcs)
    x = np.hstack([fc.values for fc in fcs])
    return NodeFeatures(x, tuple(fc.view for fc in fcs))


def lag_feature_views(z, lag: int):
    """Lead and lag cross-correlation matrices for a positive ``lag``."""
    if lag <= 0:
        raise ValidationError(f"lag must be positive, got {lag}")
    t = z.values.shape[0] if hasattr(z, "values") else np.asarray(z).shape[0]
    if lag > t - 3:
        raise LagTooLarge(lag, t)
    return fc_matrix(z, View(CROSSCORR, lag)), fc_matrix(z, View(CROSSCORR, -lag))


def default_rho(fc: FcMatrix, fraction: float = DEFAULT_RHO_FRACTION) -> float:
    """Largest positive upper-triangle value outside the view's own top-``fraction`` cut."""
    return top_positive_cut(fc.values, fraction)[1]


def build_edge_features(
    adj_pearson: Adjacency,
    fcs: Sequence[FcMatrix],
    rho=None,
    rho_fraction: float = DEFAULT_RHO_FRACTION,
) -> EdgeFeatures:
    """Indicator ``R_k[i, j] > rho_k`` for every Pearson edge ``(i, j)`` and view ``k``."""
    fcs = list(fcs)
    n = _check_same_n(fcs)
    if adj_pearson.n != n:
        raise ShapeMismatch(f"adjacency has {adj_pearson.n} nodes, FC matrices have {n}")
    if not any(fc.view == View(PEARSON) for fc in fcs):
        raise MissingPearsonView("edge features need the Pearson view among the FC matrices")
    if rho is None:
        rho = [default_rho(fc, rho_fraction) for fc in fcs]
    elif np.isscalar(rho):
        rho = [float(rho)] * len(fcs)
    rho = tuple(float(r) for r in rho)
    if len(rho) != len(fcs):
        raise ShapeMismatch(f"{len(rho)} thresholds for {len(fcs)} views")
    if adj_pearson.edges:
        i, j = np.array(adj_pearson.edges).T
        e = np.column_stack([fc.values[i, j] > r for fc, r in zip(fcs, rho)]).astype(np.uint8)
    else:
        e = np.zeros((0, len(fcs)), dtype=np.uint8)
    return EdgeFeatures(e, tuple(fc.view for fc in fcs), rho)
