"""Neighbourhood-level verdicts: shape-based, count-based and centroid-distance detectors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Hashable

import numpy as np
from scipy.stats import binom

from .local import AlertBatch
from .neighborhoods import Neighborhood
from .shape import (
    DEFAULT_MIN_TRAINING_FVS,
    DEFAULT_PERCENTILE,
    GammaThreshold,
    ReferenceHistogram,
    bin_counts,
    score_counts,
)


class Decision(str, Enum):
    MALICIOUS = "malicious"
    BENIGN = "benign"
    NO_DECISION = "no_decision"


@dataclass(frozen=True)
class GlobalVerdict:
    neighborhood_id: Hashable
    decision: Decision
    score: float
    eligible_fv_count: int
    detector: str = "shape"


def _alert_matrix(nb) -> np.ndarray:
    if isinstance(nb, Neighborhood):
        if not nb.alert_fvs:
            return np.empty((0, 0))
        return np.vstack([a.fv for a in nb.alert_fvs])
    if isinstance(nb, AlertBatch):
        return nb.fvs
    return np.asarray(nb, dtype=float)


def shape_verdict_from_counts(
    counts: np.ndarray,
    fv_count: int,
    ref: ReferenceHistogram,
    gamma: GammaThreshold,
    min_fvs: int = DEFAULT_MIN_TRAINING_FVS,
    neighborhood_id: Hashable = None,
) -> GlobalVerdict:
    """Verdict from (L, b) bin counts already taken with the reference edges."""
    counts = np.asarray(counts)
    if counts.shape != ref.histogram.bins.shape:
        raise ValueError(f"counts of shape {counts.shape} do not match reference {ref.histogram.bins.shape}")
    if fv_count < min_fvs or counts.sum() == 0:
        return GlobalVerdict(neighborhood_id, Decision.NO_DECISION, math.nan, int(fv_count))
    score = score_counts(counts, ref)
    decision = Decision.MALICIOUS if score > gamma.gamma else Decision.BENIGN
    return GlobalVerdict(neighborhood_id, decision, score, int(fv_count))


def shape_gd_classify(
    nb: Neighborhood,
    ref: ReferenceHistogram,
    gamma: GammaThreshold,
    min_fvs: int = DEFAULT_MIN_TRAINING_FVS,
) -> GlobalVerdict:
    """Score the neighbourhood's alert histogram against the reference; ties go to Benign."""
    X = _alert_matrix(nb)
    L = ref.edges.shape[0]
    if len(X) and X.shape[1] != L:
        raise ValueError(f"alert-FVs have dimension {X.shape[1]}, reference has {L}")
    counts = bin_counts(X, ref.edges) if len(X) else np.zeros(ref.histogram.bins.shape, dtype=np.int64)
    return shape_verdict_from_counts(counts, nb.total_fv_count, ref, gamma, min_fvs, nb.id)


@dataclass(frozen=True)
class CountGDConfig:
    estimated_neighborhood_fv_count: int
    ld_fp_rate: float
    alert_threshold_percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        if self.estimated_neighborhood_fv_count <= 0:
            raise ValueError("estimated neighbourhood size must be > 0")
        if not 0.0 <= self.ld_fp_rate <= 1.0:
            raise ValueError("ld_fp_rate must lie in [0, 1]")
        if not 0.0 < self.alert_threshold_percentile < 1.0:
            raise ValueError("alert_threshold_percentile must lie in (0, 1)")


@dataclass(frozen=True)
class SizeError:
    relative_error: float

    def __post_init__(self):
        if not self.relative_error > -1:
            raise ValueError("relative_error must be > -1")

    def apply(self, true_count: int) -> int:
        return max(1, int(round(true_count * (1.0 + self.relative_error))))


def count_gd_threshold(cfg: CountGDConfig) -> int:
    """Benign-hypothesis alert-count quantile for the estimated neighbourhood size."""
    return int(binom.ppf(cfg.alert_threshold_percentile, cfg.estimated_neighborhood_fv_count, cfg.ld_fp_rate))


def count_gd_classify(alert_count: int, cfg: CountGDConfig, neighborhood_id: Hashable = None) -> GlobalVerdict:
    tau = count_gd_threshold(cfg)
    decision = Decision.MALICIOUS if alert_count > tau else Decision.BENIGN
    return GlobalVerdict(neighborhood_id, decision, float(alert_count), cfg.estimated_neighborhood_fv_count, "count")


def count_tail_log10(alert_count: int, fv_count: int, fp_rate: float) -> float:
    """log10 P(at least ``alert_count`` alerts | all ``fv_count`` FVs benign)."""
    return float(binom.logsf(alert_count - 1, fv_count, fp_rate) / math.log(10))


def count_gd_sensitivity(
    true_fv_count: int,
    size_error: SizeError | float,
    cfg: CountGDConfig,
    benign_runs,
    malicious_runs,
) -> tuple[float, float]:
    """Global (FP, TP) of Count-GD when the size estimate is off by ``size_error``.

    ``benign_runs`` and ``malicious_runs`` are the observed alert counts of
    neighbourhoods whose true size is ``true_fv_count``.
    """
    benign = np.asarray(benign_runs)
    malicious = np.asarray(malicious_runs)
    if len(benign) < 100 or len(malicious) < 100:
        raise ValueError("need at least 100 benign and 100 malicious runs")
    err = size_error if isinstance(size_error, SizeError) else SizeError(float(size_error))
    estimate = CountGDConfig(err.apply(true_fv_count), cfg.ld_fp_rate, cfg.alert_threshold_percentile)
    tau = count_gd_threshold(estimate)
    return float(np.mean(benign > tau)), float(np.mean(malicious > tau))


def alert_centroid(alert_fvs) -> np.ndarray:
    X = _alert_matrix(alert_fvs)
    if len(X) == 0:
        raise ValueError("no alert-FVs to average")
    return X.mean(axis=0)


def cluster_gd_score(nb, benign_centroid) -> float:
    """Euclidean distance between the neighbourhood's mean alert-FV and the benign alert centroid."""
    X = _alert_matrix(nb)
    if len(X) == 0:
        raise ValueError("cannot score a neighbourhood without alert-FVs")
    return float(np.linalg.norm(X.mean(axis=0) - np.asarray(benign_centroid, dtype=float)))
