"""Class-conditional feature-vector generators.

Feature vectors live directly in the reduced L-dimensional space the local
detectors consume. Two families are provided: the scalar Gaussian toy with
means -1/+1, and a diagonal-Gaussian model in L dimensions whose malicious
mean sits ``separation`` benign standard deviations away along a fixed
direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

from .labels import ClassLabel
from .local import OperatingPoint, ThresholdLD, measure_operating_point, train_linear_ld

DEFAULT_DIMS = 10


class CalibrationError(ValueError):
    """No separation in the search bracket reaches the requested operating point."""


@dataclass(frozen=True)
class GaussianToyModel:
    benign_mean: float = -1.0
    malicious_mean: float = 1.0
    std_dev: float = 1.0

    def __post_init__(self):
        if not self.std_dev > 0:
            raise ValueError("std_dev must be > 0")

    @property
    def dims(self) -> int:
        return 1

    def mean(self, label: ClassLabel) -> np.ndarray:
        m = self.malicious_mean if ClassLabel.parse(label) is ClassLabel.MALICIOUS else self.benign_mean
        return np.array([m])

    def scale(self, label: ClassLabel) -> np.ndarray:
        return np.array([self.std_dev])


def sample_toy(model: GaussianToyModel, label: ClassLabel, rng_seed) -> float:
    rng = np.random.default_rng(rng_seed)
    return float(model.mean(label)[0] + model.std_dev * rng.standard_normal())


def sample_toy_batch(model: GaussianToyModel, label: ClassLabel, n: int, rng_seed) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    return model.mean(label)[0] + model.std_dev * rng.standard_normal(n)


def _vec(value, dims: int, default: float) -> np.ndarray:
    if value is None:
        return np.full(dims, default, dtype=float)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dims, float(arr))
    if arr.shape != (dims,):
        raise ValueError(f"expected a length-{dims} vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FVClassModel:
    """Diagonal Gaussians for the two classes.

    ``malicious_mean = benign_mean + separation * benign_scale * direction``
    with ``direction`` normalised to unit length.
    """

    dims: int = DEFAULT_DIMS
    separation: float = 3.0
    direction: np.ndarray = field(default=None)
    benign_mean: np.ndarray = field(default=None)
    benign_scale: np.ndarray = field(default=None)
    malicious_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError("dims must be >= 1")
        d = _vec(self.direction, self.dims, 1.0)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ValueError("direction must be non-zero")
        for name, value in (
            ("direction", d / norm),
            ("benign_mean", _vec(self.benign_mean, self.dims, 0.0)),
            ("benign_scale", _vec(self.benign_scale, self.dims, 1.0)),
            ("malicious_scale", _vec(self.malicious_scale, self.dims, 1.0)),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if np.any(self.benign_scale <= 0) or np.any(self.malicious_scale <= 0):
            raise ValueError("all scales must be > 0")
        if not np.isfinite(self.separation) or self.separation < 0:
            raise ValueError("separation must be finite and >= 0")

    @property
    def malicious_mean(self) -> np.ndarray:
        return self.benign_mean + self.separation * self.benign_scale * self.direction

    def mean(self, label: ClassLabel) -> np.ndarray:
        return self.malicious_mean if ClassLabel.parse(label) is ClassLabel.MALICIOUS else self.benign_mean

    def scale(self, label: ClassLabel) -> np.ndarray:
        return self.malicious_scale if ClassLabel.parse(label) is ClassLabel.MALICIOUS else self.benign_scale

    def with_separation(self, separation: float) -> "FVClassModel":
        return replace(self, separation=float(separation))

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "separation": float(self.separation),
            "direction": [float(v) for v in self.direction],
            "benign_mean": [float(v) for v in self.benign_mean],
            "benign_scale": [float(v) for v in self.benign_scale],
            "malicious_scale": [float(v) for v in self.malicious_scale],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FVClassModel":
        return cls(**{k: data[k] for k in ("dims", "separation", "direction", "benign_mean", "benign_scale", "malicious_scale") if k in data})

    @classmethod
    def from_toy(cls, toy: GaussianToyModel) -> "FVClassModel":
        gap = toy.malicious_mean - toy.benign_mean
        return cls(
            dims=1,
            separation=abs(gap) / toy.std_dev,
            direction=[1.0 if gap >= 0 else -1.0],
            benign_mean=[toy.benign_mean],
            benign_scale=[toy.std_dev],
            malicious_scale=[toy.std_dev],
        )


def sample_fvs(model: FVClassModel, label: ClassLabel, n: int, rng) -> np.ndarray:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return model.mean(label) + model.scale(label) * rng.standard_normal((n, model.dims))


def sample_fv(model: FVClassModel, label: ClassLabel, rng_seed) -> np.ndarray:
    return sample_fvs(model, label, 1, rng_seed)[0]


def _rates_at(model: FVClassModel, separation: float, eps_b, eps_m, target_fp: float):
    m = model.with_separation(separation)
    benign = m.benign_mean + m.benign_scale * eps_b
    malicious = m.malicious_mean + m.malicious_scale * eps_m
    ld = train_linear_ld(benign, malicious, target_fp)
    return ld, measure_operating_point(ld, benign, malicious)


def calibrate_separation(
    model: FVClassModel,
    target_fp: float,
    target_tp: float,
    samples: int = 100_000,
    seed=0,
    bracket: tuple[float, float] = (0.0, 20.0),
    tolerance: float = 0.01,
) -> FVClassModel:
    """Bisect ``separation`` until the trained linear LD hits (target_fp, target_tp).

    Draws are shared across bisection steps, so the measured TP is monotone in
    the separation. The result is checked on fresh held-out draws and rejected
    if either rate misses its target by more than ``tolerance``.
    """
    if not 0.0 < target_fp < target_tp < 1.0:
        raise CalibrationError("need 0 < target_fp < target_tp < 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    fit_rng, check_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    eps_b = fit_rng.standard_normal((samples, model.dims))
    eps_m = fit_rng.standard_normal((samples, model.dims))
    lo, hi = bracket
    lo = max(lo, 1e-9)
    _, op_hi = _rates_at(model, hi, eps_b, eps_m, target_fp)
    if op_hi.tp_rate < target_tp:
        raise CalibrationError(f"TP {op_hi.tp_rate:.4f} at separation {hi} is below target {target_tp}")
    _, op_lo = _rates_at(model, lo, eps_b, eps_m, target_fp)
    if op_lo.tp_rate > target_tp:
        raise CalibrationError(f"TP {op_lo.tp_rate:.4f} at separation {lo} already exceeds target {target_tp}")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        _, op = _rates_at(model, mid, eps_b, eps_m, target_fp)
        if op.tp_rate < target_tp:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-7:
            break
    calibrated = model.with_separation(0.5 * (lo + hi))
    ld, _ = _rates_at(model, calibrated.separation, eps_b, eps_m, target_fp)
    held_out = measure_operating_point(
        ld,
        sample_fvs(calibrated, ClassLabel.BENIGN, samples, check_rng),
        sample_fvs(calibrated, ClassLabel.MALICIOUS, samples, check_rng),
    )
    if abs(held_out.fp_rate - target_fp) > tolerance or abs(held_out.tp_rate - target_tp) > tolerance:
        raise CalibrationError(f"held-out operating point {held_out} misses ({target_fp}, {target_tp})")
    return calibrated


def matched_malicious_scale(target_fp: float, target_tp: float) -> float:
    """Malicious spread along the detector direction that equalises alert-conditional means.

    With a unit-variance benign class thresholded at t = Q(1 - fp), the mean of
    the benign alerts along the direction is pdf(t) / fp. A malicious class with
    spread s whose mean is placed so that a fraction tp lies above t has alert
    mean t + s * (q + pdf(q) / tp), q = Q(tp). Equating the two gives s.
    At such a spread the two classes' alerts share their mean vector and differ
    only in shape.
    """
    if not 0.0 < target_fp < target_tp < 1.0:
        raise ValueError("need 0 < target_fp < target_tp < 1")
    t = float(ndtri(1.0 - target_fp))
    q = float(ndtri(target_tp))
    benign_excess = norm.pdf(t) / target_fp - t
    return float(benign_excess / (q + norm.pdf(q) / target_tp))


def shape_only_model(
    dims: int = DEFAULT_DIMS,
    active_dims: int = 5,
    target_fp: float = 0.06,
    target_tp: float = 0.924,
    malicious_scale: float | None = None,
) -> FVClassModel:
    """Uncalibrated model whose class difference lives in the first ``active_dims`` coordinates.

    Coordinates outside the active set are identically distributed for both
    classes. Inside it the malicious spread defaults to
    :func:`matched_malicious_scale`, so a mean-difference detector sees alerts
    whose centroid does not depend on the class.
    """
    if not 1 <= active_dims <= dims:
        raise ValueError("active_dims must lie in [1, dims]")
    if malicious_scale is None:
        malicious_scale = matched_malicious_scale(target_fp, target_tp)
    direction = np.zeros(dims)
    direction[:active_dims] = 1.0
    scale = np.ones(dims)
    scale[:active_dims] = malicious_scale
    return FVClassModel(dims=dims, separation=0.0, direction=direction, malicious_scale=scale)


def toy_operating_point(model: GaussianToyModel, threshold: float, n: int, seed) -> OperatingPoint:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    b_seed, m_seed = ss.spawn(2)
    ld = ThresholdLD(threshold)
    return measure_operating_point(
        ld,
        sample_toy_batch(model, ClassLabel.BENIGN, n, b_seed),
        sample_toy_batch(model, ClassLabel.MALICIOUS, n, m_seed),
    )
