"""Per-ROI z-scoring and high-amplitude signal retention.

A subject's recording is a ``T x n`` matrix with one column per ROI. The
retention step zeroes (or binarizes) every sample whose absolute z-score falls
below a threshold, keeping only the large fluctuations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConstantSignal, DegenerateRetention, ValidationError

PERCENTILE = "percentile"
STDDEV = "stddev"

#: minimum number of non-zero samples a ROI must keep after thresholding
MIN_RETAINED = 3


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BoldMatrix:
    """Raw ROI time series, ``values[t, r]``."""

    values: np.ndarray
    roi_labels: Optional[tuple] = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ValidationError(f"expected a 2-D T x n matrix, got shape {values.shape}")
        t, n = values.shape
        if t < 2 or n < 2:
            raise ValidationError(f"need T >= 2 and n >= 2, got T={t}, n={n}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))
            raise ValidationError(f"non-finite entries at (t, roi) {bad[:5].tolist()}")
        object.__setattr__(self, "values", values)
        if self.roi_labels is not None:
            labels = tuple(str(s) for s in self.roi_labels)
            if len(labels) != n:
                raise ValidationError(f"{len(labels)} ROI labels for {n} columns")
            object.__setattr__(self, "roi_labels", labels)

    @property
    def t_count(self) -> int:
        return self.values.shape[0]

    @property
    def roi_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NormalizedMatrix:
    """Column-wise z-scores plus the statistics used to produce them.

    ``kept`` holds the source column index of each column (it differs from
    ``range(n)`` only when constant ROIs were dropped). ``meta`` carries
    stage bookkeeping such as retention thresholds.
    """

    values: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    kept: tuple = ()
    roi_labels: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "std", _frozen(self.std))
        if not self.kept:
            object.__setattr__(self, "kept", tuple(range(self.values.shape[1])))

    @property
    def t_count(self) -> int:
        return self.values.shape[0]

    @property
    def roi_count(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, **meta) -> "NormalizedMatrix":
        return NormalizedMatrix(
            values, self.mean, self.std, self.kept, self.roi_labels, {**self.meta, **meta}
        )


@dataclass(frozen=True)
class RetentionSpec:
    """Threshold rule plus binarization flag.

    ``mode="percentile"`` keeps the top ``value`` percent of each ROI's
    absolute z-scores; ``mode="stddev"`` keeps samples at or above ``value``
    times the pooled standard deviation of all z-scores.
    """

    mode: str
    value: float
    binarize: bool = False

    def __post_init__(self):
        if self.mode == PERCENTILE:
            if not 0 < self.value <= 100:
                raise ValidationError(f"percentile alpha must be in (0, 100], got {self.value}")
        elif self.mode == STDDEV:
            if not self.value > 0:
                raise ValidationError(f"stddev beta must be positive, got {self.value}")
        else:
            raise ValidationError(f"unknown threshold mode {self.mode!r}")

    @classmethod
    def percentile(cls, alpha=30.0, binarize=False):
        return cls(PERCENTILE, float(alpha), bool(binarize))

    @classmethod
    def stddev(cls, beta=1.0, binarize=False):
        return cls(STDDEV, float(beta), bool(binarize))

    @property
    def gamma(self) -> int:
        return int(self.binarize)

    @property
    def name(self) -> str:
        tag = "p" if self.mode == PERCENTILE else "sd"
        return f"{tag}{self.value:g}-g{self.gamma}"

    def to_dict(self) -> dict:
        return {"mode": self.mode, "value": self.value, "binarize": self.binarize}

    @classmethod
    def from_dict(cls, d) -> "RetentionSpec":
        return cls(d["mode"], float(d["value"]), bool(d.get("binarize", False)))

    @classmethod
    def parse(cls, name: str) -> "RetentionSpec":
        """Parse ``p30-g0`` / ``sd1-g1`` style names."""
        try:
            head, gamma = name.split("-g")
            if head.startswith("sd"):
                return cls.stddev(float(head[2:]), gamma == "1")
            if head.startswith("p"):
                return cls.percentile(float(head[1:]), gamma == "1")
        except ValueError:
            pass
        raise ValidationError(f"cannot parse retention name {name!r}")


def _is_constant(col):
    return bool(np.all(col == col[0]))


def z_normalize(raw, on_constant: str = "abort") -> NormalizedMatrix:
    """Z-score each column with the population standard deviation.

    Parameters
    ----------
    raw : BoldMatrix or array-like, shape (T, n)
    on_constant : {"abort", "drop"}
        What to do with a column whose values are all identical. ``"abort"``
        raises :class:`ConstantSignal`; ``"drop"`` removes the column and
        emits a warning.
    """
    if not isinstance(raw, BoldMatrix):
        raw = BoldMatrix(raw)
    values = raw.values
    constant = [r for r in range(values.shape[1]) if _is_constant(values[:, r])]
    if constant:
        labels = raw.roi_labels
        if on_constant != "drop":
            r = constant[0]
            raise ConstantSignal(r, labels[r] if labels else None)
        warnings.warn(f"dropping constant ROIs {constant}", stacklevel=2)
    kept = tuple(r for r in range(values.shape[1]) if r not in set(constant))
    if not kept:
        raise ValidationError("every ROI is constant")
    sub = values[:, kept]
    mean = sub.mean(axis=0)
    std = sub.std(axis=0)
    z = (sub - mean) / std
    labels = tuple(raw.roi_labels[r] for r in kept) if raw.roi_labels else None
    meta = {"dropped_rois": list(constant)} if constant else {}
    return NormalizedMatrix(z, mean, std, kept, labels, meta)


def percentile_count(alpha: float, t_count: int) -> int:
    """Number of samples the top-``alpha`` percent rule keeps out of ``t_count``."""
    # alpha * T is formed first so 30 * 10 / 100 stays exactly 3
    k = math.ceil(alpha * t_count / 100.0 - 1e-9)
    return min(max(k, 1), t_count)


def compute_threshold(z, spec: RetentionSpec):
    """Return the retention threshold.

    Percentile mode gives one threshold per ROI: the nearest-rank cut that
    keeps the ``ceil(alpha/100 * T)`` largest absolute values. StdDev mode
    gives a single scalar, ``beta`` times the pooled population standard
    deviation of every entry.
    """
    values = z.values if isinstance(z, NormalizedMatrix) else np.asarray(z, dtype=np.float64)
    if spec.mode == PERCENTILE:
        t = values.shape[0]
        k = percentile_count(spec.value, t)
        ordered = np.sort(np.abs(values), axis=0)
        return ordered[t - k, :].copy()
    return float(spec.value * values.std())


def apply_threshold(values, theta, binarize: bool):
    """Elementwise thresholding with retention (``binarize=False``) or binarization."""
    values = np.asarray(values, dtype=np.float64)
    keep = np.abs(values) >= theta
    if binarize:
        return keep.astype(np.float64)
    return np.where(keep, values, 0.0)


def retain_high_amplitude(
    z: NormalizedMatrix,
    spec: RetentionSpec,
    min_retained: int = MIN_RETAINED,
) -> NormalizedMatrix:
    """Threshold ``z`` and record the threshold(s) used in ``meta``."""
    theta = compute_threshold(z, spec)
    keep = np.abs(z.values) >= theta
    counts = keep.sum(axis=0)
    low = np.flatnonzero(counts < min_retained)
    if low.size:
        r = int(low[0])
        raise DegenerateRetention(z.kept[r], int(counts[r]), min_retained)
    out = apply_threshold(z.values, theta, spec.binarize)
    if spec.mode == PERCENTILE:
        theta_meta = {"scope": "per_roi", "theta": np.asarray(theta).tolist()}
    else:
        theta_meta = {"scope": "global", "theta": theta}
    return z.with_values(
        out,
        retention={**spec.to_dict(), **theta_meta, "retained": counts.tolist()},
    )


def standardize_columns(values: Sequence) -> np.ndarray:
    """Z-score columns of a plain array (no validation, no constant handling)."""
    a = np.asarray(values, dtype=np.float64)
    return (a - a.mean(axis=0)) / a.std(axis=0)
