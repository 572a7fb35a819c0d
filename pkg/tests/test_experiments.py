import dataclasses

import numpy as np
import pytest

from shapegd import experiments as ex
from shapegd.synthetic import FVClassModel


def _with(cfg, **sections):
    return dataclasses.replace(cfg, **{name: dataclasses.replace(getattr(cfg, name), **kw) for name, kw in sections.items()})


def test_benign_null_has_no_power(cfg, detector):
    null = _with(cfg, pure_shape={"malicious_fraction": 0.0})
    res = ex.run_pure_shape_experiment(null, detector)
    assert res.fp_rate <= 0.01
    assert res.tp_rate <= 0.04


def test_score_gap_grows_with_separation(cfg):
    small = _with(cfg, shape={"gamma_neighborhoods": 100}, pure_shape={"benign_neighborhoods": 100, "malicious_neighborhoods": 100})
    medians = []
    for i, s in enumerate((0.25, 0.5, 1.0, 2.0, 3.0)):
        det = ex.build_detector(FVClassModel(separation=s), 0.06, 200_000, 1 + i)
        res = ex.run_pure_shape_experiment(small, det)
        medians.append(float(np.median(res.malicious_scores) - np.median(res.benign_scores)))
    assert all(b > a for a, b in zip(medians, medians[1:])), medians


def test_no_clicks_means_no_detection(cfg, detector):
    quiet = _with(cfg, phishing={"group_counts": [1]}, detect_sweep={"repetitions": 3, "click_rates": [0.0]})
    (point,) = ex.run_detection_sweep(quiet, detector)
    assert point.infected_summary().censored == 3
    assert all(o.infected_end == 0 for o in point.outcomes)
    assert point.false_alarm_rate() < 0.05


def test_longer_window_detects_later(cfg, detector):
    wh = _with(cfg, waterhole={"ntw": [6, 100]}, detect_sweep={"scenario": "waterhole", "repetitions": 5})
    short, long = ex.run_detection_sweep(wh, detector)
    assert (short.ntw, long.ntw) == (6, 100)
    assert short.infected_summary().count == 5
    long_infected = [o.infected_at_detection if o.detected else o.infected_end for o in long.outcomes]
    assert np.median(long_infected) > short.infected_summary().median


def test_worker_count_does_not_change_results(cfg, detector):
    wh = _with(cfg, detect_sweep={"scenario": "waterhole", "repetitions": 2})
    serial = ex.run_detection_sweep(wh, detector)
    pooled = ex.run_detection_sweep(_with(wh, detect_sweep={"workers": 2}), detector)
    assert serial == pooled


def test_phishing_window_must_fit_horizon(cfg, detector, phishing_setup):
    sample = ex.sample_phishing(detector, ex.phishing_scenario(cfg), 600, 5)
    with pytest.raises(ValueError):
        ex.phishing_run(sample, phishing_setup, 3600, 1, 10, cfg.shape.min_fvs)


def test_check_times():
    t = ex.check_times(60, 10)
    assert t[0] > 0 and t[-1] == 60 and np.all(np.diff(t) == 10)
