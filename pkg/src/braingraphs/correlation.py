"""Pairwise association metrics between ROI time series.

Pearson and the lagged cross-correlation share one centred-product kernel, so
``cross_correlation(x, y, 0)`` is bit-for-bit ``pearson(x, y)``. Kendall's tau
is tau-a: ``(n_c - n_d) / (T (T - 1) / 2)``, with pairs tied in either
variable counted as neither concordant nor discordant. The counts come from a
merge-sort inversion count (Knight's algorithm), O(T log T) per pair.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import LagTooLarge, ValidationError, ZeroVariance
from .signal import NormalizedMatrix

PEARSON = "pearson"
SPEARMAN = "spearman"
KENDALL = "kendall"
CROSSCORR = "xcorr"
METRICS = (PEARSON, SPEARMAN, KENDALL, CROSSCORR)


@dataclass(frozen=True, order=True)
class View:
    """One correlation view: a metric plus, for cross-correlation, a signed lag."""

    metric: str
    lag: int = 0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}")
        if self.metric != CROSSCORR and self.lag != 0:
            raise ValidationError(f"{self.metric} takes no lag")

    @property
    def symmetric(self) -> bool:
        return self.metric != CROSSCORR or self.lag == 0

    @property
    def name(self) -> str:
        if self.metric == CROSSCORR:
            return f"xcorr{self.lag:+d}"
        return self.metric

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, text: str) -> "View":
        text = text.strip().lower()
        m = re.fullmatch(r"xcorr([+-]?\d+)", text)
        if m:
            return cls(CROSSCORR, int(m.group(1)))
        return cls(text)


@dataclass(frozen=True)
class FcMatrix:
    """``n x n`` functional connectivity matrix under one view."""

    values: np.ndarray
    view: View
    source_retention: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]


# -- scalar metrics -----------------------------------------------------------


def _as_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError(f"expected two equal-length 1-D sequences, got {x.shape}, {y.shape}")
    if x.size < 3:
        raise ValidationError("need at least 3 samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite input")
    return x, y


def _centered_corr(a, b):
    saa = float(a @ a)
    sbb = float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        raise ZeroVariance()
    return float(a @ b) / math.sqrt(saa * sbb)


def _clamp(r):
    return min(1.0, max(-1.0, r))


def _check_nonconstant(*seqs):
    for s in seqs:
        if np.all(s == s[0]):
            raise ZeroVariance()


def pearson(x, y) -> float:
    """Pearson correlation with population statistics, clamped to [-1, 1]."""
    x, y = _as_pair(x, y)
    _check_nonconstant(x, y)
    return _clamp(_centered_corr(x - x.mean(), y - y.mean()))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    bounds = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1], True])
    group_rank = (bounds[:-1] + 1 + bounds[1:]) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(group_rank, np.diff(bounds))
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of the average-rank transforms."""
    x, y = _as_pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


def _dense_ranks(x):
    return np.unique(x, return_inverse=True)[1].astype(np.int64).reshape(-1)


@njit(cache=True)
def _tie_pairs(sorted_keys):
    total = 0
    run = 1
    for i in range(1, sorted_keys.shape[0]):
        if sorted_keys[i] == sorted_keys[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


@njit(cache=True)
def _count_inversions(a, buf):
    # bottom-up merge sort of ``a`` in place; counts pairs i < j with a[i] > a[j]
    n = a.shape[0]
    inversions = 0
    width = 1
    while width < n:
        lo = 0
        while lo < n - width:
            mid = lo + width
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[i] <= a[j]:
                    buf[k] = a[i]
                    i += 1
                else:
                    buf[k] = a[j]
                    inversions += mid - i
                    j += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
            for m in range(lo, hi):
                a[m] = buf[m]
            lo += 2 * width
        width *= 2
    return inversions


@njit(cache=True)
def _pair_counts(rx, ry):
    n = rx.shape[0]
    key = rx * n + ry
    order = np.argsort(key, kind="mergesort")
    xs = rx[order]
    ys = ry[order].copy()
    n1 = _tie_pairs(xs)
    n3 = _tie_pairs(key[order])
    discordant = _count_inversions(ys, np.empty_like(ys))
    n2 = _tie_pairs(ys)
    n0 = n * (n - 1) // 2
    concordant = n0 - n1 - n2 + n3 - discordant
    return concordant, discordant


@njit(cache=True)
def _kendall_matrix(ranks):
    t, n = ranks.shape
    out = np.zeros((n, n))
    denom = t * (t - 1) / 2.0
    for i in range(n):
        rx = np.ascontiguousarray(ranks[:, i])
        for j in range(i + 1, n):
            c, d = _pair_counts(rx, np.ascontiguousarray(ranks[:, j]))
            out[i, j] = (c - d) / denom
    return out


def kendall_counts(x, y):
    """Return ``(n_concordant, n_discordant)``; tied pairs are in neither."""
    x, y = _as_pair(x, y)
    c, d = _pair_counts(_dense_ranks(x), _dense_ranks(y))
    return int(c), int(d)


def kendall(x, y) -> float:
    """Kendall's tau-a."""
    x, y = _as_pair(x, y)
    if np.all(x == x[0]) or np.all(y == y[0]):
        warnings.warn("kendall: all-tied input, tau-a is 0", stacklevel=2)
    c, d = kendall_counts(x, y)
    t = x.size
    return (c - d) / (t * (t - 1) / 2)


def _raw_cross_correlation(x, y, lag):
    t = x.size
    if abs(lag) > t - 3:
        raise LagTooLarge(lag, t)
    dx = x - x.mean()
    dy = y - y.mean()
    if lag >= 0:
        return _centered_corr(dx[: t - lag], dy[lag:])
    return _centered_corr(dx[-lag:], dy[: t + lag])


def cross_correlation(x, y, lag: int) -> float:
    """Correlation of ``x(t)`` with ``y(t + lag)`` over the overlap window.

    Means are taken over the full series; the numerator and both
    denominator sums run over the ``T - |lag|`` overlapping samples. A
    positive ``lag`` means ``x`` leads ``y``.
    """
    x, y = _as_pair(x, y)
    lag = int(lag)
    if lag == 0:
        _check_nonconstant(x, y)
    return _clamp(_raw_cross_correlation(x, y, lag))


# -- matrices -----------------------------------------------------------------


def _matrix_values(z):
    if isinstance(z, NormalizedMatrix):
        return z.values
    return np.asarray(z, dtype=np.float64)


def _check_columns(values):
    for r in range(values.shape[1]):
        col = values[:, r]
        if np.all(col == col[0]):
            other = 1 if r == 0 else 0
            raise ZeroVariance("constant ROI column", pair=(r, other))


def _symmetric_from_gram(d):
    gram = d.T @ d
    scale = np.sqrt(np.diag(gram))
    with np.errstate(invalid="ignore", divide="ignore"):
        full = gram / np.outer(scale, scale)
    upper = np.triu(full, 1)
    return upper + upper.T


def _lagged(values, lag):
    t, n = values.shape
    if abs(lag) > t - 3:
        raise LagTooLarge(lag, t)
    d = values - values.mean(axis=0)
    if lag >= 0:
        a, b = d[: t - lag], d[lag:]
    else:
        a, b = d[-lag:], d[: t + lag]
    saa = np.einsum("ti,ti->i", a, a)
    sbb = np.einsum("ti,ti->i", b, b)
    for r in range(n):
        if saa[r] == 0.0 or sbb[r] == 0.0:
            raise ZeroVariance("constant overlap segment", pair=(r, r))
    return (a.T @ b) / np.sqrt(np.outer(saa, sbb))


def fc_matrix(z, view, source_retention: Optional[dict] = None) -> FcMatrix:
    """Apply one view to every ROI pair of a ``T x n`` matrix.

    Symmetric metrics are computed on the upper triangle and mirrored, so
    the result is exactly symmetric with a unit diagonal. Cross-correlation
    is computed for every ordered pair including the diagonal.
    """
    if isinstance(view, str):
        view = View.parse(view)
    values = _matrix_values(z)
    if source_retention is None and isinstance(z, NormalizedMatrix):
        source_retention = z.meta.get("retention")
    if values.shape[0] < 3:
        raise ValidationError("need at least 3 time points")
    if view.metric == CROSSCORR and view.lag != 0:
        _check_columns(values)
        m = _lagged(values, view.lag)
    else:
        _check_columns(values)
        if view.metric in (PEARSON, CROSSCORR):
            m = _symmetric_from_gram(values - values.mean(axis=0))
        elif view.metric == SPEARMAN:
            ranks = np.column_stack([average_ranks(c) for c in values.T])
            _check_columns(ranks)
            m = _symmetric_from_gram(ranks - ranks.mean(axis=0))
        else:
            ranks = np.column_stack([_dense_ranks(c) for c in values.T])
            upper = _kendall_matrix(np.ascontiguousarray(ranks))
            m = upper + upper.T
        np.fill_diagonal(m, 1.0)
    meta = {}
    lo, hi = float(m.min()), float(m.max())
    if lo < -1.0 or hi > 1.0:
        meta["clamp"] = {"raw_min": lo, "raw_max": hi, "count": int(np.sum(np.abs(m) > 1.0))}
        m = np.clip(m, -1.0, 1.0)
    return FcMatrix(m, view, source_retention, meta)


def symmetrize_max(fc: FcMatrix) -> FcMatrix:
    """Elementwise ``max(M, M.T)``; used before thresholding a lagged matrix."""
    m = np.maximum(fc.values, fc.values.T)
    return FcMatrix(m, fc.view, fc.source_retention, {**fc.meta, "symmetrized": "max"})
