"""End-to-end acceptance checks, one per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL ...`` line with the
measured values, then asserts. Run directly with ``python tests/test_acceptance.py``
or through pytest.
"""
import dataclasses
import hashlib
import math
import subprocess
import sys

import numpy as np
import pytest

from shapegd import experiments as ex
from shapegd.global_detectors import CountGDConfig, Decision, count_gd_classify, count_gd_threshold, shape_gd_classify
from shapegd.labels import ClassLabel
from shapegd.local import AlertFV, sample_alert_fvs
from shapegd.neighborhoods import Neighborhood
from shapegd.shape import build_histogram, shape_score, wasserstein_1d
from shapegd.synthetic import GaussianToyModel, toy_operating_point

UNIVERSE = 1086


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return emit


def _with(cfg, **sections):
    return dataclasses.replace(cfg, **{name: dataclasses.replace(getattr(cfg, name), **kw) for name, kw in sections.items()})


def _binomial_quantile(q, n, p):
    total = 0.0
    for k in range(n + 1):
        total += math.comb(n, k) * p**k * (1 - p) ** (n - k)
        if total >= q:
            return k
    return n


def test_criterion_1_toy_oracle(report):
    op = toy_operating_point(GaussianToyModel(), 0.0, 10**6, 2024)
    fp = op.fp_rate
    small, big = CountGDConfig(100, fp), CountGDConfig(1000, fp)
    taus = (count_gd_threshold(small), count_gd_threshold(big))
    oracle = (_binomial_quantile(0.99, 100, fp), _binomial_quantile(0.99, 1000, fp))
    d_small, d_big = count_gd_classify(90, small).decision, count_gd_classify(90, big).decision
    ok = (
        abs(op.fp_rate - 0.1587) <= 0.003
        and abs(op.tp_rate - 0.8413) <= 0.003
        and taus == oracle
        and d_small is Decision.MALICIOUS
        and d_big is Decision.BENIGN
    )
    report(1, ok, f"FP={op.fp_rate:.4f} TP={op.tp_rate:.4f} tau={taus} oracle={oracle} 90/100->{d_small.value} 90/1000->{d_big.value}")
    assert ok


def test_criterion_2_wasserstein_metric(report):
    rng = np.random.default_rng(2)
    worst_triangle = math.inf
    ok = True
    for _ in range(1000):
        p, q, r = rng.dirichlet(np.full(50, 0.5), 3)
        pq, qp = wasserstein_1d(p, q), wasserstein_1d(q, p)
        pr, rq = wasserstein_1d(p, r), wasserstein_1d(r, q)
        worst_triangle = min(worst_triangle, pr + rq - pq)
        ok &= pq >= 0 and pq == qp and wasserstein_1d(p, p) == 0.0 and pq > 0
    ok &= worst_triangle >= -1e-9
    e = np.eye(50)
    hand = (
        wasserstein_1d([1, 0], [0, 1]),
        wasserstein_1d(e[7], e[10]),
        wasserstein_1d([0.5, 0.5], [0, 1]),
    )
    ok &= hand == (1.0, 3.0, 0.5)
    report(2, ok, f"1000 triples, min triangle slack={worst_triangle:.3e}, hand values={hand}")
    assert ok


def test_criterion_3_count_invariance(report, cfg, detector, phishing_setup):
    rng = np.random.default_rng(3)
    ref, gamma = phishing_setup.ref, phishing_setup.gamma
    mismatches, decisions = 0, {d: 0 for d in Decision}
    for i in range(100):
        total = int(rng.integers(15_000, 30_000))
        nb = int(rng.binomial(total, detector.p_benign))
        nm = int(rng.integers(0, 400))
        X = np.vstack([
            sample_alert_fvs(detector.ld, detector.model, ClassLabel.BENIGN, nb, rng),
            sample_alert_fvs(detector.ld, detector.model, ClassLabel.MALICIOUS, nm, rng),
        ])
        XX = np.vstack([X, X])
        s1 = shape_score(build_histogram(X, ref.edges), ref)
        s2 = shape_score(build_histogram(XX, ref.edges), ref)
        once = Neighborhood(("n", i), frozenset(), 0, 0.0, 3600.0, [AlertFV(x, 0, 0.0) for x in X], total)
        twice = Neighborhood(("n", i), frozenset(), 0, 0.0, 3600.0, [AlertFV(x, 0, 0.0) for x in XX], 2 * total)
        v1, v2 = shape_gd_classify(once, ref, gamma), shape_gd_classify(twice, ref, gamma)
        mismatches += s1 != s2 or v1.decision is not v2.decision or v1.score != v2.score
        decisions[v1.decision] += 1
    ok = mismatches == 0
    report(3, ok, f"100 neighbourhoods, {mismatches} mismatches, verdicts {{{', '.join(f'{d.value}: {n}' for d, n in decisions.items())}}}")
    assert ok


def _separation(cfg, detector, bins):
    res = ex.run_pure_shape_experiment(cfg, detector, bins)
    ok = res.tp_rate == 1.0 and res.fp_rate <= 0.02 and res.gap > 0
    return ok, f"b={bins}: TP={res.tp_rate:.3f} FP={res.fp_rate:.3f} benign max={res.benign_scores.max():.3f} malicious min={res.malicious_scores.min():.3f}"


def test_criterion_4_pure_shape_separation(report, cfg, detector):
    ok, detail = _separation(cfg, detector, 50)
    op = detector.exact
    report(4, ok, f"LD fp={op.fp_rate:.4f} tp={op.tp_rate:.4f}; 500 vs 500 at 15000 FVs, {detail}")
    assert ok


def test_criterion_5_binning_robustness(report, cfg, detector):
    results = [_separation(cfg, detector, b) for b in (20, 50, 100)]
    ok = all(r[0] for r in results)
    report(5, ok, "; ".join(r[1] for r in results))
    assert ok


def test_criterion_6_count_fragility(report, cfg, detector):
    res = ex.run_count_fragility(cfg, detector)
    e = np.array(res.errors)
    fp, tp = np.array(res.fp), np.array(res.tp)
    shape_ok = res.shape_tp >= 0.95 and res.shape_fp <= 0.02
    under = fp[e <= -0.10 + 1e-12]
    over = tp[e >= 0.20 - 1e-12]
    monotone = bool(np.all(np.diff(fp) <= 0) and np.all(np.diff(tp) <= 0))
    ok = shape_ok and len(under) > 0 and bool(np.all(under > 0.5)) and len(over) > 0 and bool(np.all(over < 0.5)) and monotone
    at = {x: i for i, x in enumerate(res.errors)}
    report(
        6, ok,
        f"infected fraction {res.infected_fraction:g} (shape TP={res.shape_tp:.3f} FP={res.shape_fp:.3f}); "
        f"count FP@-10%={fp[at[-0.1]]:.3f} TP@0={tp[at[0.0]]:.3f} TP@+20%={tp[at[0.2]]:.3f}; monotone={monotone}",
    )
    assert ok


@pytest.fixture(scope="module")
def phishing_points(cfg, detector):
    run = _with(cfg, phishing={"ntw": [3600], "group_counts": [1, 50]}, detect_sweep={"scenario": "phishing", "repetitions": 50, "click_rates": [1.0]})
    return {p.group_count: p for p in ex.run_detection_sweep(run, detector)}


def test_criterion_7_early_detection(report, cfg, detector, phishing_points):
    k1 = phishing_points[1]
    ph = [o.infected_at_detection for o in k1.outcomes if o.detected]
    ph_ok = len(k1.outcomes) >= 50 and len(ph) == len(k1.outcomes) and max(ph) < 0.05 * UNIVERSE
    wh_cfg = _with(cfg, waterhole={"ntw": [6], "group_counts": [1]}, detect_sweep={"scenario": "waterhole", "repetitions": 50, "infection_probabilities": [1.0]})
    (wh,) = ex.run_detection_sweep(wh_cfg, detector)
    clients = cfg.waterhole.client_population
    wi = [o.infected_at_detection for o in wh.outcomes if o.detected]
    wh_ok = len(wh.outcomes) >= 50 and len(wi) == len(wh.outcomes) and max(wi) < 0.01 * clients
    ok = ph_ok and wh_ok
    report(
        7, ok,
        f"phishing k=1: {len(ph)}/{len(k1.outcomes)} detected, median {np.median(ph):g}, max {max(ph, default=math.nan)} (< {0.05 * UNIVERSE:.1f}); "
        f"waterhole 6 s: {len(wi)}/{len(wh.outcomes)} detected, median {np.median(wi):g}, max {max(wi, default=math.nan)} (< {0.01 * clients:g})",
    )
    assert ok


def test_criterion_8_structural_filtering(report, phishing_points):
    temporal, structural = phishing_points[1].infected_summary(), phishing_points[50].infected_summary()
    ratio = temporal.median / structural.median
    ok = structural.censored == 0 and temporal.censored == 0 and ratio >= 2.0
    report(8, ok, f"median infected k=1: {temporal.median:g}, k=50: {structural.median:g}, ratio {ratio:.2f}, censored {temporal.censored}/{structural.censored}")
    assert ok


def test_criterion_9_clustering_baseline(report, cfg, detector):
    res = ex.run_cluster_auc(cfg, detector)
    ok = 0.35 <= res.cluster_auc <= 0.65 and res.shape_auc >= 0.95 and len(res.eval_times) >= 50
    report(
        9, ok,
        f"{len(res.eval_times)} paired runs, infected <= {int(res.infected.max())}: centroid AUC={res.cluster_auc:.3f}, "
        f"shape AUC={res.shape_auc:.3f} (gamma TP={res.shape_tp:.2f} FP={res.shape_fp:.2f})",
    )
    assert ok


DETERMINISM_CONFIG = """seed = 5
[model]
ld_training_samples = 50000
calibration_samples = 50000
[shape]
gamma_neighborhoods = 100
[pure_shape]
benign_neighborhoods = 100
malicious_neighborhoods = 100
[waterhole]
horizon = 60
[detect_sweep]
scenario = "waterhole"
repetitions = 2
[trace]
horizon = 600
[roc]
input = "pure/pure_shape_scores.csv"
"""


def _hash_tree(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(report, tmp_path):
    digests = []
    for run in ("first", "second"):
        base = tmp_path / run
        base.mkdir()
        (base / "c.toml").write_text(DETERMINISM_CONFIG)
        for cmd, out in (("gen-trace", "trace"), ("train-ref", "ref"), ("pure-shape", "pure"), ("detect-sweep", "sweep"), ("roc", "roc")):
            proc = subprocess.run(
                [sys.executable, "-m", "shapegd.cli", cmd, "--config", str(base / "c.toml"), "--out", str(base / out)],
                capture_output=True, text=True,
            )
            assert proc.returncode == 0, proc.stderr
        (base / "c.toml").unlink()
        digests.append(_hash_tree(base))
    ok = digests[0] == digests[1] and len(digests[0]) >= 10
    report(10, ok, f"{len(digests[0])} output files across 5 subcommands, identical hashes on rerun: {digests[0] == digests[1]}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
