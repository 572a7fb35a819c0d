import numpy as np
import pytest
from scipy.stats import norm

from shapegd.labels import ClassLabel
from shapegd.local import alert_probability, measure_operating_point, sample_alert_fvs, train_linear_ld
from shapegd.synthetic import (
    CalibrationError,
    FVClassModel,
    GaussianToyModel,
    calibrate_separation,
    matched_malicious_scale,
    sample_fv,
    sample_fvs,
    sample_toy,
    sample_toy_batch,
    shape_only_model,
    toy_operating_point,
)

B, M = ClassLabel.BENIGN, ClassLabel.MALICIOUS


def test_toy_degenerate_spread_returns_mean():
    assert sample_toy(GaussianToyModel(std_dev=1e-300), B, 5) == -1.0


def test_toy_rejects_non_positive_spread():
    with pytest.raises(ValueError):
        GaussianToyModel(std_dev=0.0)


def test_toy_benign_mean_converges():
    x = sample_toy_batch(GaussianToyModel(), B, 10**6, 1)
    assert abs(x.mean() + 1.0) < 0.01


def test_toy_false_positive_oracle():
    x = sample_toy_batch(GaussianToyModel(), B, 10**6, 2)
    expected = norm.cdf(-1.0)
    assert expected == pytest.approx(0.158655, abs=1e-6)
    assert abs(np.mean(x > 0) - expected) < 3 / np.sqrt(10**6)


def test_toy_operating_point_at_zero_threshold():
    op = toy_operating_point(GaussianToyModel(), 0.0, 10**6, 3)
    assert abs(op.fp_rate - 0.1587) < 0.003
    assert abs(op.tp_rate - 0.8413) < 0.003


def test_sample_fv_degenerate_spread_returns_class_mean():
    model = FVClassModel(dims=4, separation=2.0, benign_mean=np.ones(4), malicious_scale=1e-300)
    assert np.array_equal(sample_fv(model, M, 0), model.malicious_mean)


def test_sample_fv_is_seed_deterministic():
    model = FVClassModel()
    assert np.array_equal(sample_fv(model, M, 11), sample_fv(model, M, 11))
    assert not np.array_equal(sample_fv(model, M, 11), sample_fv(model, M, 12))


def test_per_coordinate_means_within_three_sigma():
    model = FVClassModel(dims=10, separation=2.5)
    n = 10**5
    for label in (B, M):
        X = sample_fvs(model, label, n, 4)
        bound = 3 * model.scale(label) / np.sqrt(n)
        assert np.all(np.abs(X.mean(axis=0) - model.mean(label)) < bound)


def test_model_invariants():
    with pytest.raises(ValueError):
        FVClassModel(dims=3, benign_scale=[1.0, 0.0, 1.0])
    model = FVClassModel(dims=3, separation=0.5)
    assert np.any(model.malicious_mean != model.benign_mean)
    assert np.all(np.isfinite(sample_fvs(model, M, 100, 0)))
    assert FVClassModel.from_dict(model.to_dict()).to_dict() == model.to_dict()


def test_calibration_hits_operating_point():
    model = calibrate_separation(FVClassModel(dims=10), 0.06, 0.924, samples=100_000, seed=5)
    rng = np.random.default_rng(6)
    benign, malicious = sample_fvs(model, B, 100_000, rng), sample_fvs(model, M, 100_000, rng)
    ld = train_linear_ld(benign, malicious, 0.06)
    check = np.random.default_rng(7)
    op = measure_operating_point(ld, sample_fvs(model, B, 100_000, check), sample_fvs(model, M, 100_000, check))
    assert abs(op.fp_rate - 0.06) <= 0.01
    assert abs(op.tp_rate - 0.924) <= 0.01


def test_calibration_rejects_infeasible_targets():
    with pytest.raises(CalibrationError):
        calibrate_separation(FVClassModel(dims=2), 0.3, 0.3, samples=2000)
    with pytest.raises(CalibrationError):
        calibrate_separation(FVClassModel(dims=2), 0.06, 0.999999, samples=2000, bracket=(0.0, 1.0))


def test_tp_monotone_in_separation():
    rng = np.random.default_rng(8)
    eps_b = rng.standard_normal((10_000, 10))
    eps_m = rng.standard_normal((10_000, 10))
    tps = []
    for s in np.linspace(0.5, 5.0, 10):
        model = FVClassModel(dims=10, separation=s)
        benign = model.benign_mean + eps_b
        malicious = model.malicious_mean + eps_m
        ld = train_linear_ld(benign, malicious, 0.06)
        tps.append(measure_operating_point(ld, benign, malicious).tp_rate)
    assert all(b >= a for a, b in zip(tps, tps[1:]))


def test_matched_scale_equalises_alert_means(detector):
    rng = np.random.default_rng(9)
    benign = sample_alert_fvs(detector.ld, detector.model, B, 200_000, rng)
    malicious = sample_alert_fvs(detector.ld, detector.model, M, 200_000, rng)
    assert np.max(np.abs(benign.mean(axis=0) - malicious.mean(axis=0))) < 0.01


def test_matched_scale_formula_on_the_decision_axis():
    fp, tp = 0.06, 0.924
    s = matched_malicious_scale(fp, tp)
    t = norm.ppf(1 - fp)
    benign_alert_mean = norm.pdf(t) / fp
    mu = t - s * norm.ppf(1 - tp)
    alpha = (t - mu) / s
    malicious_alert_mean = mu + s * norm.pdf(alpha) / norm.sf(alpha)
    assert malicious_alert_mean == pytest.approx(benign_alert_mean, rel=1e-12)


def test_shape_only_model_leaves_inactive_coordinates_alone():
    model = shape_only_model(dims=10, active_dims=5).with_separation(2.0)
    assert np.array_equal(model.malicious_mean[5:], model.benign_mean[5:])
    assert np.array_equal(model.malicious_scale[5:], model.benign_scale[5:])
    assert np.all(model.malicious_scale[:5] < 1)
    with pytest.raises(ValueError):
        shape_only_model(dims=3, active_dims=4)


def test_detector_fixture_reaches_target(detector):
    assert abs(alert_probability(detector.ld, detector.model, B) - 0.06) < 0.01
    assert abs(alert_probability(detector.ld, detector.model, M) - 0.924) < 0.01
