"""Weak per-node detectors that turn feature vectors into alerts.

Only feature vectors classified as malicious leave a node, stamped with the
node id and time. The ground-truth label rides along for evaluation and is
never an input to :func:`classify`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator, Sequence, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .labels import ClassLabel


class UntrainableError(ValueError):
    """Class means coincide, so no separating direction exists."""


@dataclass(frozen=True)
class ThresholdLD:
    threshold: float = 0.0
    dims: int = 1

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def as_linear(self) -> "LinearLD":
        return LinearLD(np.ones(1), -float(self.threshold))

    def decision(self, X) -> np.ndarray:
        X = _as_matrix(X, 1)
        return X[:, 0] - self.threshold


@dataclass(frozen=True)
class LinearLD:
    weight_vector: np.ndarray
    bias: float

    def __post_init__(self):
        w = np.asarray(self.weight_vector, dtype=float).ravel()
        if not np.any(w):
            raise ValueError("weight_vector must not be all-zero")
        w.setflags(write=False)
        object.__setattr__(self, "weight_vector", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dims(self) -> int:
        return self.weight_vector.shape[0]

    def as_linear(self) -> "LinearLD":
        return self

    def decision(self, X) -> np.ndarray:
        X = _as_matrix(X, self.dims)
        return X @ self.weight_vector + self.bias

    def to_dict(self) -> dict:
        return {"weight_vector": [float(v) for v in self.weight_vector], "bias": self.bias}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearLD":
        return cls(np.asarray(data["weight_vector"], dtype=float), float(data["bias"]))


LocalDetector = Union[ThresholdLD, LinearLD]


@dataclass(frozen=True)
class OperatingPoint:
    fp_rate: float
    tp_rate: float


def _as_matrix(X, dims: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1) if X.shape[0] == dims else X.reshape(-1, 1)
    if X.shape[1] != dims:
        raise ValueError(f"feature vector has dimension {X.shape[1]}, detector expects {dims}")
    return X


def predict(ld: LocalDetector, X) -> np.ndarray:
    """Boolean alert mask for a batch of feature vectors (strict ``>``)."""
    return ld.decision(X) > 0


def classify(ld: LocalDetector, fv) -> ClassLabel:
    fv = np.asarray(fv, dtype=float)
    if fv.ndim > 1 or fv.size != ld.dims:
        raise ValueError(f"feature vector has dimension {fv.size}, detector expects {ld.dims}")
    return ClassLabel.MALICIOUS if bool(predict(ld, fv.reshape(1, -1))[0]) else ClassLabel.BENIGN


def train_linear_ld(benign_fvs, malicious_fvs, target_fp: float) -> LinearLD:
    """Mean-difference direction, bias set at the benign ``1 - target_fp`` quantile.

    With k = round(target_fp * n) the bias is minus the (k+1)-th largest benign
    projection, so exactly k training points (absent ties) score above zero.
    """
    B = np.asarray(benign_fvs, dtype=float)
    M = np.asarray(malicious_fvs, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if len(B) == 0 or len(M) == 0:
        raise ValueError("both training sets must be non-empty")
    if B.shape[1] != M.shape[1]:
        raise ValueError("benign and malicious sets differ in dimension")
    if not 0.0 <= target_fp < 1.0:
        raise ValueError("target_fp must lie in [0, 1)")
    w = M.mean(axis=0) - B.mean(axis=0)
    if not np.any(w) or np.linalg.norm(w) < 1e-12:
        raise UntrainableError("class means are identical")
    proj = np.sort(B @ w)[::-1]
    k = int(round(target_fp * len(proj)))
    return LinearLD(w, -float(proj[k]))


def measure_operating_point(ld: LocalDetector, benign_fvs, malicious_fvs) -> OperatingPoint:
    return OperatingPoint(float(np.mean(predict(ld, benign_fvs))), float(np.mean(predict(ld, malicious_fvs))))


@dataclass(frozen=True)
class AlertFV:
    fv: np.ndarray
    node_id: Hashable
    timestamp: float
    true_label: ClassLabel = ClassLabel.BENIGN

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        object.__setattr__(self, "fv", np.asarray(self.fv, dtype=float).ravel())


@dataclass
class AlertBatch:
    """Column-wise store of many alerts; rows share an index across fields."""

    times: np.ndarray
    nodes: np.ndarray
    fvs: np.ndarray
    malicious: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.nodes = np.asarray(self.nodes)
        self.fvs = np.asarray(self.fvs, dtype=float)
        if self.fvs.ndim == 1:
            self.fvs = self.fvs.reshape(len(self.times), -1)
        if self.malicious is None:
            self.malicious = np.zeros(len(self.times), dtype=bool)
        self.malicious = np.asarray(self.malicious, dtype=bool)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dims(self) -> int:
        return self.fvs.shape[1]

    @classmethod
    def empty(cls, dims: int, node_dtype=np.int64) -> "AlertBatch":
        return cls(np.empty(0), np.empty(0, dtype=node_dtype), np.empty((0, dims)), np.empty(0, dtype=bool))

    @classmethod
    def from_alerts(cls, alerts: Sequence[AlertFV], dims: int | None = None) -> "AlertBatch":
        alerts = list(alerts)
        if not alerts:
            if dims is None:
                raise ValueError("dims required for an empty batch")
            return cls.empty(dims)
        nodes = np.empty(len(alerts), dtype=object)
        nodes[:] = [a.node_id for a in alerts]
        if all(isinstance(n, (int, np.integer)) for n in nodes):
            nodes = nodes.astype(np.int64)
        return cls(
            np.array([a.timestamp for a in alerts]),
            nodes,
            np.vstack([a.fv for a in alerts]),
            np.array([a.true_label is ClassLabel.MALICIOUS for a in alerts]),
        )

    @classmethod
    def concat(cls, batches: Sequence["AlertBatch"], dims: int | None = None) -> "AlertBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty(dims or 1)
        if len(batches) == 1:
            return batches[0]
        return cls(
            np.concatenate([b.times for b in batches]),
            np.concatenate([b.nodes for b in batches]),
            np.vstack([b.fvs for b in batches]),
            np.concatenate([b.malicious for b in batches]),
        )

    def select(self, mask) -> "AlertBatch":
        return AlertBatch(self.times[mask], self.nodes[mask], self.fvs[mask], self.malicious[mask])

    def sorted(self) -> "AlertBatch":
        order = np.lexsort((self.nodes, self.times)) if self.nodes.dtype != object else np.argsort(self.times, kind="stable")
        return self.select(order)

    def __iter__(self) -> Iterator[AlertFV]:
        for i in range(len(self)):
            label = ClassLabel.MALICIOUS if self.malicious[i] else ClassLabel.BENIGN
            node = self.nodes[i].item() if isinstance(self.nodes[i], np.generic) else self.nodes[i]
            yield AlertFV(self.fvs[i], node, float(self.times[i]), label)


def run_ld_stream(ld: LocalDetector, fv_stream: Iterable) -> Iterator[AlertFV]:
    """Yield an AlertFV for every ``(fv, node_id, timestamp, true_label)`` the LD flags."""
    for fv, node_id, timestamp, true_label in fv_stream:
        if classify(ld, fv) is ClassLabel.MALICIOUS:
            yield AlertFV(fv, node_id, timestamp, ClassLabel.parse(true_label))


def alert_probability(ld: LocalDetector, model, label: ClassLabel) -> float:
    """Exact P(alert) for a diagonal-Gaussian class under a linear decision rule."""
    lin = ld.as_linear()
    mean_g, sd_g = _decision_moments(lin, model, label)
    return float(ndtr(mean_g / sd_g))


def _decision_moments(lin: LinearLD, model, label):
    mu = np.asarray(model.mean(label), dtype=float)
    scale = np.asarray(model.scale(label), dtype=float)
    w = lin.weight_vector
    mean_g = float(w @ mu + lin.bias)
    sd_g = float(np.sqrt(np.sum((w * scale) ** 2)))
    return mean_g, sd_g


def sample_alert_fvs(ld: LocalDetector, model, label: ClassLabel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` feature vectors from the class distribution conditioned on an alert.

    Equivalent in distribution to rejection sampling (draw, classify, keep
    alerts), at the cost of only the kept draws. The decision statistic is
    drawn from its truncated normal law, then an unconditioned draw is shifted
    along the covariance-weighted direction so its statistic hits that value.
    """
    lin = ld.as_linear()
    mu = np.asarray(model.mean(label), dtype=float)
    scale = np.asarray(model.scale(label), dtype=float)
    w = lin.weight_vector
    mean_g, sd_g = _decision_moments(lin, model, label)
    p_alert = float(ndtr(mean_g / sd_g))
    if n == 0:
        return np.empty((0, mu.size))
    if p_alert <= 0.0:
        raise ValueError("class never triggers an alert under this detector")
    # upper-tail inverse keeps precision when alerts are rare
    v = rng.random(n) * p_alert
    v = np.maximum(v, np.finfo(float).tiny)
    g = mean_g - sd_g * ndtri(v)
    y = mu + scale * rng.standard_normal((n, mu.size))
    cov_w = scale**2 * w
    return y + np.outer((g - (y @ w + lin.bias)) / sd_g**2, cov_w)
