"""ROC curves and the summary statistics used in result tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

AUC_CROSSCHECK_TOL = 1e-9


@dataclass(frozen=True)
class RocCurve:
    fp_rates: np.ndarray
    tp_rates: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fp_rates.tolist(), self.tp_rates.tolist()))


def mann_whitney_auc(scores_pos, scores_neg) -> float:
    """P(pos > neg) + 0.5 P(pos = neg), from average ranks."""
    pos = np.asarray(scores_pos, dtype=float)
    neg = np.asarray(scores_neg, dtype=float)
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def compute_roc(scores_pos, scores_neg) -> RocCurve:
    """Threshold sweep over every distinct score, high to low; trapezoidal AUC.

    Tied scores move the curve diagonally, which credits ties with one half.
    """
    pos = np.asarray(scores_pos, dtype=float).ravel()
    neg = np.asarray(scores_neg, dtype=float).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both score sets must be non-empty")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("scores must be finite")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # counts of scores >= each threshold
    tp = len(pos) - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg_sorted, thresholds, side="left")
    tpr = np.r_[0.0, tp / len(pos)]
    fpr = np.r_[0.0, fp / len(neg)]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    check = mann_whitney_auc(pos, neg)
    if abs(auc - check) > AUC_CROSSCHECK_TOL:
        raise RuntimeError(f"trapezoid AUC {auc!r} disagrees with rank statistic {check!r}")
    return RocCurve(fpr, tpr, np.r_[np.inf, thresholds], auc)


@dataclass(frozen=True)
class Summary:
    count: int
    censored: int
    median: float
    low: float
    high: float


def summarize(values, censored: int = 0, whiskers: tuple[float, float] = (0.01, 0.99)) -> Summary:
    """Median and percentile whiskers over uncensored values, with the censored count alongside."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return Summary(0, censored, float("nan"), float("nan"), float("nan"))
    lo, hi = np.quantile(v, whiskers)
    return Summary(len(v), censored, float(np.median(v)), float(lo), float(hi))
