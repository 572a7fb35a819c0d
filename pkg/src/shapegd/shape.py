"""Vector histograms, coordinate-wise Wasserstein ShapeScore, and thresholding.

A vector histogram bins each of the L coordinates of a set of alert-FVs
separately and normalises every row to unit mass. Bin edges are fixed once,
when the reference histogram is trained, so that every later histogram is
comparable bin-for-bin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .local import AlertBatch, AlertFV, LocalDetector, predict

DEFAULT_BINS = 50
DEFAULT_PERCENTILE = 0.99
DEFAULT_MIN_TRAINING_FVS = 15_000
NORMALIZATION_TOL = 1e-9


class InsufficientTrainingData(ValueError):
    pass


def _fv_matrix(alert_fvs) -> np.ndarray:
    if isinstance(alert_fvs, AlertBatch):
        return alert_fvs.fvs
    if isinstance(alert_fvs, np.ndarray):
        return alert_fvs.reshape(len(alert_fvs), -1) if alert_fvs.ndim == 1 else alert_fvs
    items = list(alert_fvs)
    if not items:
        return np.empty((0, 0))
    return np.vstack([a.fv if isinstance(a, AlertFV) else np.asarray(a, dtype=float).ravel() for a in items])


def uniform_edges(fvs, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Per-dimension uniformly spaced edges spanning [min, max] of ``fvs``."""
    X = _fv_matrix(fvs)
    if len(X) == 0:
        raise ValueError("cannot derive edges from an empty set")
    lo, hi = X.min(axis=0), X.max(axis=0)
    flat = hi <= lo
    lo = np.where(flat, lo - 0.5, lo)
    hi = np.where(flat, hi + 0.5, hi)
    return np.linspace(lo, hi, bins + 1, axis=1)


def _check_edges(edges: np.ndarray) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 2 or edges.shape[1] < 2:
        raise ValueError("edges must be an (L, b+1) array")
    if not np.all(np.diff(edges, axis=1) > 0):
        raise ValueError("edges must be strictly ascending in every dimension")
    return edges


def bin_indices(fvs, edges) -> np.ndarray:
    """(n, L) bin index of every coordinate; out-of-range values clamp into the edge bins."""
    X = _fv_matrix(fvs)
    edges = np.asarray(edges, dtype=float)
    L = edges.shape[0]
    if len(X) == 0:
        return np.zeros((0, L), dtype=np.int64)
    if X.shape[1] != L:
        raise ValueError(f"feature vectors have dimension {X.shape[1]}, edges have {L}")
    out = np.empty(X.shape, dtype=np.int64)
    for l in range(L):
        out[:, l] = np.searchsorted(edges[l, 1:-1], X[:, l], side="right")
    return out


def bin_counts(fvs, edges) -> np.ndarray:
    """Integer (L, b) counts; out-of-range values clamp into the edge bins."""
    edges = np.asarray(edges, dtype=float)
    L, b = edges.shape[0], edges.shape[1] - 1
    idx = bin_indices(fvs, edges)
    counts = np.zeros((L, b), dtype=np.int64)
    for l in range(L):
        counts[l] = np.bincount(idx[:, l], minlength=b)
    return counts


@dataclass(frozen=True)
class VectorHistogram:
    bins: np.ndarray
    bin_edges: np.ndarray
    valid: bool = True

    @property
    def dims(self) -> int:
        return self.bins.shape[0]

    @property
    def bin_count(self) -> int:
        return self.bins.shape[1]

    @classmethod
    def from_counts(cls, counts, edges) -> "VectorHistogram":
        counts = np.asarray(counts)
        total = counts.sum(axis=1, keepdims=True)
        if counts.size == 0 or np.any(total == 0):
            return cls(np.zeros(counts.shape), np.asarray(edges, dtype=float), valid=False)
        # division of integer-valued floats keeps duplicated multisets bit-identical
        return cls(counts.astype(float) / total.astype(float), np.asarray(edges, dtype=float))


def build_histogram(alert_fvs, edges) -> VectorHistogram:
    """Bin and normalise alert-FVs along each dimension.

    An empty input yields a histogram flagged ``valid=False``.
    """
    edges = _check_edges(edges)
    return VectorHistogram.from_counts(bin_counts(alert_fvs, edges), edges)


def _check_distribution(p: np.ndarray, name: str) -> None:
    if np.any(p < -NORMALIZATION_TOL) or abs(p.sum() - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"{name} is not a normalised histogram")


def _w1(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.abs(np.cumsum(p - q)).sum())


def wasserstein_1d(p, q) -> float:
    """Earth mover's distance between two b-bin histograms, in bin units.

    Sum over bins of the absolute prefix-sum of ``p - q``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim != 1 or p.shape != q.shape:
        raise ValueError("histograms must be 1-D and of equal length")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    return _w1(p, q)


@dataclass(frozen=True)
class ReferenceHistogram:
    histogram: VectorHistogram
    training_fv_count: int
    alert_count: int = 0

    @property
    def edges(self) -> np.ndarray:
        return self.histogram.bin_edges


@dataclass(frozen=True)
class GammaThreshold:
    gamma: float
    percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")


def _check_compatible(h: VectorHistogram, ref: ReferenceHistogram) -> None:
    r = ref.histogram
    if h.bins.shape != r.bins.shape:
        raise ValueError(f"histogram shape {h.bins.shape} differs from reference {r.bins.shape}")
    if not np.array_equal(h.bin_edges, r.bin_edges):
        raise ValueError("histogram was binned with different edges than the reference")


def shape_score(h: VectorHistogram, ref: ReferenceHistogram) -> float:
    """Sum over coordinates of the 1-D Wasserstein distance to the reference."""
    _check_compatible(h, ref)
    if not h.valid:
        raise ValueError("cannot score an invalid (empty) histogram")
    return sum(_w1(h.bins[l], ref.histogram.bins[l]) for l in range(h.dims))


def score_counts(counts, ref: ReferenceHistogram) -> float:
    """ShapeScore straight from (L, b) bin counts taken with the reference edges."""
    return shape_score(VectorHistogram.from_counts(counts, ref.edges), ref)


def score_grid(counts, ref: ReferenceHistogram) -> np.ndarray:
    """ShapeScores of a stack of (..., L, b) count matrices; NaN where a histogram is empty."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape[-2:] != ref.histogram.bins.shape:
        raise ValueError(f"count matrices of shape {counts.shape[-2:]} do not match the reference")
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / totals
    scores = np.abs(np.cumsum(p - ref.histogram.bins, axis=-1)).sum(axis=(-1, -2))
    return np.where(np.all(totals[..., 0] > 0, axis=-1), scores, np.nan)


def train_reference(
    benign_fvs,
    ld: LocalDetector,
    min_count: int,
    bins: int = DEFAULT_BINS,
    fv_budget: int | None = None,
    min_training_fvs: int = DEFAULT_MIN_TRAINING_FVS,
) -> ReferenceHistogram:
    """Reference histogram from the LD's false positives on benign traffic.

    The first ``fv_budget`` feature vectors (all, if None) are classified; the
    alerts among them must number at least ``min_count``. Edges span the
    per-dimension range of those alerts.
    """
    X = np.asarray(benign_fvs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if fv_budget is not None:
        X = X[:fv_budget]
    if len(X) < min_training_fvs:
        raise InsufficientTrainingData(f"{len(X)} training FVs, need at least {min_training_fvs}")
    alerts = X[predict(ld, X)]
    if len(alerts) < max(min_count, 1):
        raise InsufficientTrainingData(f"{len(alerts)} false-positive alerts, need at least {max(min_count, 1)}")
    edges = uniform_edges(alerts, bins)
    return ReferenceHistogram(build_histogram(alerts, edges), len(X), len(alerts))


def min_scores_for(percentile: float) -> int:
    if not 0.0 < percentile <= 1.0:
        raise ValueError("percentile must lie in (0, 1]")
    if percentile == 1.0:
        return 1
    return max(1, int(round(1.0 / (1.0 - percentile))))


def nearest_rank(values, percentile: float) -> float:
    vals = np.sort(np.asarray(values, dtype=float))
    rank = max(1, math.ceil(percentile * len(vals) - 1e-9))
    return float(vals[rank - 1])


def calibrate_gamma(benign_scores, percentile: float = DEFAULT_PERCENTILE) -> GammaThreshold:
    """Nearest-rank percentile of benign-neighbourhood scores."""
    scores = np.asarray(list(benign_scores), dtype=float)
    need = min_scores_for(percentile)
    if len(scores) < need:
        raise ValueError(f"{len(scores)} benign scores, need at least {need} for percentile {percentile}")
    return GammaThreshold(nearest_rank(scores, percentile), percentile)
