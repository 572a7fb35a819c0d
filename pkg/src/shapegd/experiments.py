"""Experiment drivers shared by the CLI and the acceptance tests."""
from __future__ import annotations

import dataclasses
import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import (
    LogNormalOpenTime,
    PhishingScenario,
    WaterholeScenario,
    simulate_alerts,
    simulate_alerts_near,
    simulate_phishing,
    simulate_waterhole,
)
from .config import ExperimentConfig, child_seed
from .global_detectors import CountGDConfig, SizeError, count_gd_threshold
from .labels import ClassLabel
from .local import LinearLD, OperatingPoint, alert_probability, measure_operating_point, sample_alert_fvs, train_linear_ld
from .metrics import compute_roc, summarize
from .neighborhoods import PartitionSpec, SweepResult, batch_sweep, online_sweep
from .shape import (
    GammaThreshold,
    ReferenceHistogram,
    bin_counts,
    bin_indices,
    calibrate_gamma,
    score_counts,
    score_grid,
    train_reference,
)
from .synthetic import FVClassModel, calibrate_separation, sample_fvs, shape_only_model

BENIGN, MALICIOUS = ClassLabel.BENIGN, ClassLabel.MALICIOUS


# -- detector and reference preparation ---------------------------------------


@dataclass(frozen=True)
class Detector:
    model: FVClassModel
    ld: LinearLD
    training_fp: float
    exact: OperatingPoint
    held_out: OperatingPoint

    @property
    def p_benign(self) -> float:
        return self.exact.fp_rate

    @property
    def p_malicious(self) -> float:
        return self.exact.tp_rate


def _seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def build_detector(model: FVClassModel, target_fp: float, training_samples: int, seed) -> Detector:
    """Train the linear LD on fresh draws; report training, exact and held-out rates."""
    fit_seed, check_seed = _seed_sequence(seed).spawn(2)
    fit, check = np.random.default_rng(fit_seed), np.random.default_rng(check_seed)
    benign = sample_fvs(model, BENIGN, training_samples, fit)
    ld = train_linear_ld(benign, sample_fvs(model, MALICIOUS, training_samples, fit), target_fp)
    training_fp = float(np.mean(ld.decision(benign) > 0))
    exact = OperatingPoint(alert_probability(ld, model, BENIGN), alert_probability(ld, model, MALICIOUS))
    held_out = measure_operating_point(ld, sample_fvs(model, BENIGN, 100_000, check), sample_fvs(model, MALICIOUS, 100_000, check))
    return Detector(model, ld, training_fp, exact, held_out)


@functools.lru_cache(maxsize=8)
def _prepare_detector_cached(seed: int, model_cfg: tuple) -> Detector:
    m = dict(model_cfg)
    base = shape_only_model(m["dims"], m["active_dims"], m["target_fp"], m["target_tp"], m["malicious_scale"])
    model = calibrate_separation(base, m["target_fp"], m["target_tp"], samples=m["calibration_samples"], seed=child_seed(seed, "calibrate"))
    return build_detector(model, m["target_fp"], m["ld_training_samples"], child_seed(seed, "ld"))


def prepare_detector(cfg: ExperimentConfig) -> Detector:
    """Calibrated model plus trained LD; cached per (seed, model section)."""
    return _prepare_detector_cached(cfg.seed, tuple(sorted(dataclasses.asdict(cfg.model).items())))


@dataclass(frozen=True)
class ShapeSetup:
    ref: ReferenceHistogram
    gamma: GammaThreshold
    centroid: np.ndarray
    benign_scores: np.ndarray


def neighborhood_sample(det: Detector, edges: np.ndarray, n_fvs: int, malicious_fvs: int, rng: np.random.Generator):
    """Alert-FV bin counts, alert count and mean alert-FV of one neighbourhood.

    ``malicious_fvs`` of the ``n_fvs`` feature vectors come from infected
    node-seconds; each FV alerts with its class's exact probability.
    """
    nb = rng.binomial(n_fvs - malicious_fvs, det.p_benign)
    nm = rng.binomial(malicious_fvs, det.p_malicious)
    X = np.vstack([sample_alert_fvs(det.ld, det.model, BENIGN, nb, rng), sample_alert_fvs(det.ld, det.model, MALICIOUS, nm, rng)])
    mean = X.mean(axis=0) if len(X) else np.full(det.model.dims, np.nan)
    return bin_counts(X, edges), nb + nm, mean


def prepare_shape(cfg: ExperimentConfig, det: Detector, budget: int, key: str, bins: int | None = None) -> ShapeSetup:
    """Reference from ``budget`` benign FVs, then gamma from benign neighbourhoods."""
    rng = np.random.default_rng(child_seed(cfg.seed, "reference", key, budget, bins or cfg.shape.bins))
    benign = sample_fvs(det.model, BENIGN, budget, rng)
    ref = train_reference(benign, det.ld, cfg.shape.reference_min_alerts, bins or cfg.shape.bins, min_training_fvs=cfg.shape.min_fvs)
    centroid = benign[det.ld.decision(benign) > 0].mean(axis=0)
    scores = np.array(
        [score_counts(neighborhood_sample(det, ref.edges, cfg.shape.neighborhood_fvs, 0, rng)[0], ref) for _ in range(cfg.shape.gamma_neighborhoods)]
    )
    return ShapeSetup(ref, calibrate_gamma(scores, cfg.shape.percentile), centroid, scores)


# -- pure-shape experiment ----------------------------------------------------


@dataclass
class PureShapeResult:
    benign_scores: np.ndarray
    malicious_scores: np.ndarray
    gamma: GammaThreshold
    fp_rate: float
    tp_rate: float

    @property
    def gap(self) -> float:
        return float(self.malicious_scores.min() - self.benign_scores.max())


def pure_shape_scores(det: Detector, ref: ReferenceHistogram, n: int, n_fvs: int, malicious_fraction: float, rng) -> np.ndarray:
    m = int(round(malicious_fraction * n_fvs))
    return np.array([score_counts(neighborhood_sample(det, ref.edges, n_fvs, m, rng)[0], ref) for _ in range(n)])


def run_pure_shape_experiment(cfg: ExperimentConfig, det: Detector | None = None, bins: int | None = None) -> PureShapeResult:
    """Benign versus malicious neighbourhoods of a fixed FV count; gamma at the benign percentile."""
    det = det or prepare_detector(cfg)
    rng = np.random.default_rng(child_seed(cfg.seed, "pure-shape", bins or cfg.shape.bins))
    ref_rng = np.random.default_rng(child_seed(cfg.seed, "pure-shape-reference", bins or cfg.shape.bins))
    benign_train = sample_fvs(det.model, BENIGN, cfg.shape.reference_budget, ref_rng)
    ref = train_reference(benign_train, det.ld, cfg.shape.reference_min_alerts, bins or cfg.shape.bins, min_training_fvs=cfg.shape.min_fvs)
    n_fvs = cfg.shape.neighborhood_fvs
    benign = pure_shape_scores(det, ref, cfg.pure_shape.benign_neighborhoods, n_fvs, 0.0, rng)
    malicious = pure_shape_scores(det, ref, cfg.pure_shape.malicious_neighborhoods, n_fvs, cfg.pure_shape.malicious_fraction, rng)
    gamma = calibrate_gamma(benign, cfg.shape.percentile)
    return PureShapeResult(benign, malicious, gamma, float(np.mean(benign > gamma.gamma)), float(np.mean(malicious > gamma.gamma)))


# -- detection runs -----------------------------------------------------------


@dataclass
class FirstVerdict:
    group: int
    time: float
    window_start: float
    decision: str
    score: float | None
    fv_count: int


@dataclass
class RunOutcome:
    rep: int
    detected: bool
    detection_time: float | None
    infected_at_detection: int | None
    infected_end: int
    false_alarm_neighborhoods: int
    neighborhoods: int
    verdicts: list = field(default_factory=list)


def _outcome(rep, sw: SweepResult, setup: ShapeSetup, min_fvs: int, infected_total, window_start_of) -> RunOutcome:
    scores = score_grid(sw.counts, setup.ref)
    eligible = (sw.fv_counts >= min_fvs) & (sw.alert_counts > 0)
    alarm = eligible & (scores > setup.gamma.gamma)
    has_infected = sw.infected > 0
    hit = (alarm & has_infected).any(axis=0)
    present = sw.members.sum(axis=1) > 0
    false_groups = int(((alarm & ~has_infected).any(axis=1) & present).sum())
    verdicts = []
    for g in np.flatnonzero(present):
        alarms = np.flatnonzero(alarm[g])
        i = int(alarms[0]) if len(alarms) else len(sw.times) - 1
        decision = "malicious" if len(alarms) else ("benign" if eligible[g, i] else "no_decision")
        score = float(scores[g, i]) if eligible[g, i] else None
        t = float(sw.times[i])
        verdicts.append(FirstVerdict(int(g), t, window_start_of(t), decision, score, int(sw.fv_counts[g, i])))
    end = infected_total(float(sw.times[-1]))
    if not hit.any():
        return RunOutcome(rep, False, None, None, end, false_groups, int(present.sum()), verdicts)
    i = int(np.argmax(hit))
    t = float(sw.times[i])
    return RunOutcome(rep, True, t, infected_total(t), end, false_groups, int(present.sum()), verdicts)


def phishing_scenario(cfg: ExperimentConfig, click_rate: float | None = None) -> PhishingScenario:
    p = cfg.phishing
    return PhishingScenario(
        p.thread_count,
        p.recipients_per_thread,
        p.malicious_thread_count,
        p.click_rate if click_rate is None else click_rate,
        LogNormalOpenTime.from_median_mode(p.open_time_median, p.open_time_mode),
        p.universe_size,
    )


def waterhole_scenario(cfg: ExperimentConfig, infection_probability: float | None = None) -> WaterholeScenario:
    w = cfg.waterhole
    return WaterholeScenario(
        w.server_count,
        w.client_population,
        w.compromised_server,
        None,
        w.infection_probability if infection_probability is None else infection_probability,
        (w.rate_min * w.rate_scale, w.rate_max * w.rate_scale),
        w.compromised_rate * w.rate_scale,
    )


def check_times(ntw: int, interval: int) -> np.ndarray:
    checks = np.arange(interval, ntw + 1, interval, dtype=float)
    if len(checks) == 0 or checks[-1] != ntw:
        checks = np.r_[checks, float(ntw)]
    return checks


@dataclass
class PhishingSample:
    """One simulated phishing trace with its alert overlay, shared by every sweep point."""

    lists: list
    infection_times: np.ndarray
    alerts: object
    horizon: int

    def infected_before(self, t: float) -> int:
        return int(np.sum(self.infection_times < t))


def sample_phishing(det: Detector, scenario: PhishingScenario, horizon: int, seed) -> PhishingSample:
    trace_seed, fv_seed = _seed_sequence(seed).spawn(2)
    run = simulate_phishing(scenario, horizon, trace_seed)
    alerts = simulate_alerts(det.ld, det.model, run.infection_times, 0, horizon, np.random.default_rng(fv_seed))
    return PhishingSample(run.lists, run.infection_times, alerts, horizon)


def phishing_sweep(sample: PhishingSample, setup: ShapeSetup, ntw: int, group_count: int, checks: np.ndarray) -> SweepResult:
    part = PartitionSpec.contiguous(range(len(sample.lists)), group_count)
    nodes = np.concatenate(sample.lists)
    groups = np.concatenate([np.full(len(lst), part.group_of(j)) for j, lst in enumerate(sample.lists)])
    keep = sample.alerts.times < ntw
    alerts = sample.alerts.select(keep)
    bins = bin_indices(alerts.fvs, setup.ref.edges)
    return batch_sweep(nodes, groups, np.zeros(len(nodes)), group_count, 0.0, checks, alerts, bins, setup.ref.histogram.bin_count, sample.infection_times)


def phishing_run(sample: PhishingSample, setup: ShapeSetup, ntw: int, group_count: int, interval: int, min_fvs: int, rep: int = 0) -> RunOutcome:
    if ntw > sample.horizon:
        raise ValueError("window longer than the simulated horizon")
    sw = phishing_sweep(sample, setup, ntw, group_count, check_times(ntw, interval))
    return _outcome(rep, sw, setup, min_fvs, sample.infected_before, lambda t: 0.0)


@dataclass
class WaterholeSample:
    clients: np.ndarray
    servers: np.ndarray
    times: np.ndarray
    infection_times: np.ndarray
    compromise_time: float
    alerts: object
    horizon: int

    def infected_by(self, t: float) -> int:
        return int(np.sum(self.infection_times <= t))


def sample_waterhole(det: Detector, scenario: WaterholeScenario, horizon: int, seed, reach: int) -> WaterholeSample:
    """Trace plus the alerts that can enter any sliding window of length up to ``reach``."""
    trace_seed, fv_seed = _seed_sequence(seed).spawn(2)
    run = simulate_waterhole(scenario, horizon, trace_seed)
    alerts = simulate_alerts_near(
        det.ld, det.model, run.infection_times, run.log.clients, run.log.times, reach, 0, horizon, np.random.default_rng(fv_seed)
    )
    return WaterholeSample(run.log.clients, run.log.servers, run.log.times, run.infection_times, run.compromise_time, alerts, horizon)


def waterhole_run(sample: WaterholeSample, setup: ShapeSetup, ntw: int, group_count: int, server_count: int, min_fvs: int, rep: int = 0) -> RunOutcome:
    part = PartitionSpec.contiguous(range(server_count), group_count)
    group_of = np.array([part.group_of(s) for s in range(server_count)])
    bins = bin_indices(sample.alerts.fvs, setup.ref.edges)
    sw = online_sweep(
        sample.clients, group_of[sample.servers], sample.times, group_count, ntw, sample.horizon,
        sample.alerts, bins, setup.ref.histogram.bin_count, sample.infection_times,
    )
    return _outcome(rep, sw, setup, min_fvs, sample.infected_by, lambda t: t - ntw)


@dataclass
class SweepPoint:
    scenario: str
    parameter: float
    ntw: int
    group_count: int
    outcomes: list

    @property
    def detected(self) -> list:
        return [o for o in self.outcomes if o.detected]

    def infected_summary(self):
        return summarize([o.infected_at_detection for o in self.detected], censored=len(self.outcomes) - len(self.detected))

    def false_alarm_rate(self) -> float:
        total = sum(o.neighborhoods for o in self.outcomes)
        return sum(o.false_alarm_neighborhoods for o in self.outcomes) / total if total else 0.0


def _sweep_repetition(task) -> list:
    cfg, det, setup, param, rep = task
    if cfg.detect_sweep.scenario == "phishing":
        p = cfg.phishing
        sample = sample_phishing(det, phishing_scenario(cfg, param), int(max(p.ntw)), child_seed(cfg.seed, "phishing", rep))
        return [
            ((param, int(ntw), int(k)), phishing_run(sample, setup, int(ntw), int(k), p.check_interval, cfg.shape.min_fvs, rep))
            for ntw in p.ntw
            for k in p.group_counts
        ]
    w = cfg.waterhole
    sample = sample_waterhole(det, waterhole_scenario(cfg, param), w.horizon, child_seed(cfg.seed, "waterhole", rep), int(max(w.ntw)))
    return [
        ((param, int(ntw), int(k)), waterhole_run(sample, setup, int(ntw), int(k), w.server_count, cfg.shape.min_fvs, rep))
        for ntw in w.ntw
        for k in w.group_counts
    ]


def run_detection_sweep(cfg: ExperimentConfig, det: Detector | None = None) -> list[SweepPoint]:
    """Detection outcomes for every (infection parameter, NTW, group count) point.

    Repetition ``r`` reuses one trace and alert overlay across all NTW and
    group-count values, and the same seeds across infection parameters, so
    sweep points are compared on common random numbers. Repetitions may run
    in a process pool; results are keyed and sorted, so the worker count
    never changes the output.
    """
    det = det or prepare_detector(cfg)
    sweep = cfg.detect_sweep
    if sweep.scenario == "phishing":
        setup = prepare_shape(cfg, det, cfg.phishing.reference_budget, "phishing")
        params = sweep.click_rates
    else:
        setup = prepare_shape(cfg, det, cfg.waterhole.reference_budget, "waterhole")
        params = sweep.infection_probabilities
    tasks = [(cfg, det, setup, float(param), rep) for param in params for rep in range(sweep.repetitions)]
    if sweep.workers > 1:
        with ProcessPoolExecutor(sweep.workers) as pool:
            results = list(pool.map(_sweep_repetition, tasks))
    else:
        results = [_sweep_repetition(t) for t in tasks]
    points: dict[tuple, SweepPoint] = {}
    for rows in results:
        for key, out in rows:
            points.setdefault(key, SweepPoint(sweep.scenario, *key, [])).outcomes.append(out)
    for point in points.values():
        point.outcomes.sort(key=lambda o: o.rep)
    return [points[key] for key in sorted(points)]


# -- Count-GD fragility -------------------------------------------------------


@dataclass
class FragilityResult:
    infected_fraction: float
    shape_fp: float
    shape_tp: float
    errors: list
    fp: list
    tp: list
    tau: list
    fraction_table: list


def run_count_fragility(cfg: ExperimentConfig, det: Detector | None = None) -> FragilityResult:
    """Count-GD rates versus size-estimate error, at the lowest infection level Shape-GD handles.

    Every infected fraction in the grid is tried in increasing order on the
    same benign neighbourhoods; the first one where Shape-GD meets the TP/FP
    bar fixes the malicious neighbourhoods whose alert counts Count-GD sees.
    """
    det = det or prepare_detector(cfg)
    cf = cfg.count_fragility
    setup = prepare_shape(cfg, det, cfg.shape.reference_budget, "fragility")
    rng = np.random.default_rng(child_seed(cfg.seed, "fragility"))
    N = cf.true_fv_count
    benign = [neighborhood_sample(det, setup.ref.edges, N, 0, rng) for _ in range(cf.runs)]
    benign_scores = np.array([score_counts(c, setup.ref) for c, _, _ in benign])
    benign_counts = np.array([n for _, n, _ in benign])
    shape_fp = float(np.mean(benign_scores > setup.gamma.gamma))
    table = []
    chosen = None
    for f in sorted(cf.infected_fractions):
        mal = [neighborhood_sample(det, setup.ref.edges, N, int(round(f * N)), rng) for _ in range(cf.runs)]
        tp = float(np.mean([score_counts(c, setup.ref) > setup.gamma.gamma for c, _, _ in mal]))
        table.append((float(f), shape_fp, tp))
        if tp >= cf.shape_min_tp and shape_fp <= cf.shape_max_fp:
            chosen = (float(f), tp, np.array([n for _, n, _ in mal]))
            break
    if chosen is None:
        raise RuntimeError("no infected fraction in the grid lets Shape-GD meet the TP/FP bar")
    f, shape_tp, mal_counts = chosen
    base = CountGDConfig(N, det.training_fp)
    errors = cf.errors()
    fps, tps, taus = [], [], []
    for e in errors:
        err = SizeError(e)
        taus.append(count_gd_threshold(CountGDConfig(err.apply(N), base.ld_fp_rate, base.alert_threshold_percentile)))
        fps.append(float(np.mean(benign_counts > taus[-1])))
        tps.append(float(np.mean(mal_counts > taus[-1])))
    return FragilityResult(f, shape_fp, shape_tp, errors, fps, tps, taus, table)


# -- clustering baseline ------------------------------------------------------


@dataclass
class ClusterAucResult:
    cluster_scores_pos: np.ndarray
    cluster_scores_neg: np.ndarray
    shape_scores_pos: np.ndarray
    shape_scores_neg: np.ndarray
    eval_times: np.ndarray
    infected: np.ndarray
    cluster_auc: float
    shape_auc: float
    shape_tp: float
    shape_fp: float


def run_cluster_auc(cfg: ExperimentConfig, det: Detector | None = None) -> ClusterAucResult:
    """Centroid-distance versus ShapeScore ranking of phishing neighbourhoods at low infection.

    Each repetition simulates an attacked trace and a click-free control on
    the same seed. Both are scored at the last check before infections exceed
    the configured fraction of the universe.
    """
    det = det or prepare_detector(cfg)
    ca, p = cfg.cluster_auc, cfg.phishing
    setup = prepare_shape(cfg, det, p.reference_budget, "phishing")
    limit = int(math.floor(ca.max_infected_fraction * p.universe_size))
    checks_all = check_times(ca.ntw, p.check_interval)
    rows = []
    for rep in range(ca.repetitions):
        seed = child_seed(cfg.seed, "cluster", rep)
        trace_seed, fv_seed = seed.spawn(2)
        run = simulate_phishing(phishing_scenario(cfg, 1.0), ca.ntw, trace_seed)
        counts = np.array([np.sum(run.infection_times < c) for c in checks_all])
        ok = np.flatnonzero((counts <= limit) & (checks_all * p.universe_size >= cfg.shape.min_fvs))
        if len(ok) == 0:
            continue
        c = float(checks_all[ok[-1]])
        scores = []
        for infection_times in (run.infection_times, np.full_like(run.infection_times, np.inf)):
            alerts = simulate_alerts(det.ld, det.model, infection_times, 0, int(c), np.random.default_rng(fv_seed))
            sample = PhishingSample(run.lists, infection_times, alerts, int(c))
            sw = phishing_sweep(sample, setup, int(c), ca.group_count, np.array([c]))
            infected_groups = sw.infected[:, 0] > 0
            g = int(np.argmax(infected_groups)) if infected_groups.any() else 0
            mean = sw.fv_sums[g, 0] / sw.alert_counts[g, 0]
            scores.append((float(np.linalg.norm(mean - setup.centroid)), float(score_grid(sw.counts[g, 0], setup.ref))))
        rows.append((c, int(counts[ok[-1]]), scores[0], scores[1]))
    if len(rows) < 2:
        raise RuntimeError("too few repetitions reached an eligible low-infection check")
    cp = np.array([r[2][0] for r in rows])
    cn = np.array([r[3][0] for r in rows])
    sp = np.array([r[2][1] for r in rows])
    sn = np.array([r[3][1] for r in rows])
    return ClusterAucResult(
        cp, cn, sp, sn,
        np.array([r[0] for r in rows]),
        np.array([r[1] for r in rows]),
        compute_roc(cp, cn).auc,
        compute_roc(sp, sn).auc,
        float(np.mean(sp > setup.gamma.gamma)),
        float(np.mean(sn > setup.gamma.gamma)),
    )
