"""Synthetic enterprise traces with phishing and waterhole infection overlays."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, NamedTuple

import numpy as np
from scipy.stats import lognorm

from .labels import ClassLabel
from .local import AlertBatch, LocalDetector, alert_probability, sample_alert_fvs
from .neighborhoods import AccessEvent, EmailEvent

PHISHING_UNIVERSE = 1086
COMPROMISED_SERVER_RATE = 43.7


@dataclass(frozen=True)
class LogNormalOpenTime:
    """Delay between an email's delivery and its opening, in seconds."""

    mu: float = 7.9445
    sigma: float = 1.7768

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")

    @classmethod
    def from_median_mode(cls, median: float, mode: float) -> "LogNormalOpenTime":
        # median = e^mu, mode = e^(mu - sigma^2)
        if not 0 < mode < median:
            raise ValueError("need 0 < mode < median")
        mu = math.log(median)
        return cls(mu, math.sqrt(mu - math.log(mode)))

    @property
    def median(self) -> float:
        return math.exp(self.mu)

    @property
    def mode(self) -> float:
        return math.exp(self.mu - self.sigma**2)

    def cdf(self, t) -> np.ndarray:
        return lognorm.cdf(t, s=self.sigma, scale=math.exp(self.mu))

    def quantile(self, p) -> np.ndarray:
        return lognorm.ppf(p, s=self.sigma, scale=math.exp(self.mu))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.lognormal(self.mu, self.sigma, n)


@dataclass(frozen=True)
class PhishingScenario:
    thread_count: int = 50
    recipients_per_thread: int = 100
    malicious_thread_count: int = 1
    click_rate: float = 1.0
    open_time_model: LogNormalOpenTime = field(default_factory=LogNormalOpenTime)
    universe_size: int = PHISHING_UNIVERSE

    def __post_init__(self):
        if not 0 <= self.malicious_thread_count <= self.thread_count:
            raise ValueError("malicious_thread_count must lie in [0, thread_count]")
        if not 0.0 <= self.click_rate <= 1.0:
            raise ValueError("click_rate must lie in [0, 1]")
        if self.recipients_per_thread > self.universe_size:
            raise ValueError("a thread cannot have more recipients than the universe has nodes")
        if self.thread_count * self.recipients_per_thread < self.universe_size:
            raise ValueError("threads are too few to cover the node universe")


@dataclass(frozen=True)
class WaterholeScenario:
    server_count: int = 50
    client_population: int = 50_000
    compromised_server: int = 0
    compromise_time: float | None = None
    infection_probability: float = 1.0
    rate_range: tuple = (0.5, COMPROMISED_SERVER_RATE)
    compromised_rate: float = COMPROMISED_SERVER_RATE

    def __post_init__(self):
        if not 0 <= self.compromised_server < self.server_count:
            raise ValueError("compromised_server must be one of the watched servers")
        if not 0.0 <= self.infection_probability <= 1.0:
            raise ValueError("infection_probability must lie in [0, 1]")
        lo, hi = self.rate_range
        if not 0 < lo <= hi or self.compromised_rate <= 0:
            raise ValueError("request rates must be positive")
        if self.client_population < 1:
            raise ValueError("client_population must be >= 1")


class InfectionState:
    """Earliest infection time per node; a node never recovers within a run."""

    def __init__(self, times: dict | None = None, sources: tuple = ()):
        self._times: dict = {}
        self.sources = tuple(sources)
        for node, t in (times or {}).items():
            self.infect(node, t)

    def infect(self, node: Hashable, timestamp: float) -> None:
        current = self._times.get(node)
        if current is None or timestamp < current:
            self._times[node] = float(timestamp)

    def time_of(self, node: Hashable) -> float | None:
        return self._times.get(node)

    def count_at(self, timestamp: float) -> int:
        return sum(1 for t in self._times.values() if t <= timestamp)

    def items(self):
        return sorted(self._times.items(), key=lambda kv: (kv[1], str(kv[0])))

    def as_array(self, n_nodes: int) -> np.ndarray:
        """Infection times indexed by integer node id; ``inf`` marks uninfected nodes."""
        out = np.full(n_nodes, np.inf)
        for node, t in self._times.items():
            out[int(node)] = t
        return out

    def __len__(self) -> int:
        return len(self._times)

    def __contains__(self, node) -> bool:
        return node in self._times


def label_stream(infections: InfectionState, node_id: Hashable, timestamp: float) -> ClassLabel:
    t = infections.time_of(node_id)
    return ClassLabel.MALICIOUS if t is not None and t <= timestamp else ClassLabel.BENIGN


class GeneratedTrace(NamedTuple):
    events: list
    infections: InfectionState


# -- phishing ----------------------------------------------------------------


def thread_recipients(scenario: PhishingScenario, rng: np.random.Generator) -> list[np.ndarray]:
    """Recipient lists that together cover every node of the universe exactly.

    Nodes are dealt round-robin from a random permutation so each one lands on
    some list; every list is then topped up with distinct random nodes.
    """
    T, R, U = scenario.thread_count, scenario.recipients_per_thread, scenario.universe_size
    perm = rng.permutation(U)
    lists = []
    for k in range(T):
        dealt = perm[k::T]
        if len(dealt) > R:
            raise ValueError("recipients_per_thread too small to cover the universe")
        rest = np.setdiff1d(np.arange(U), dealt, assume_unique=True)
        extra = rng.choice(rest, size=R - len(dealt), replace=False)
        lists.append(np.sort(np.concatenate([dealt, extra])))
    return lists


@dataclass
class PhishingRun:
    lists: list
    malicious_threads: np.ndarray
    open_times: dict
    infection_times: np.ndarray

    @property
    def universe_size(self) -> int:
        return len(self.infection_times)


def simulate_phishing(scenario: PhishingScenario, horizon: float, seed) -> PhishingRun:
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    rng = np.random.default_rng(seed)
    lists = thread_recipients(scenario, rng)
    bad = np.sort(rng.choice(scenario.thread_count, size=scenario.malicious_thread_count, replace=False))
    infected = np.full(scenario.universe_size, np.inf)
    opens = {}
    for k in bad:
        recipients = lists[k]
        t_open = scenario.open_time_model.sample(len(recipients), rng)
        clicked = rng.random(len(recipients)) < scenario.click_rate
        opens[int(k)] = t_open
        hit = clicked & (t_open < horizon)
        np.minimum.at(infected, recipients[hit], t_open[hit])
    return PhishingRun(lists, bad, opens, infected)


def generate_phishing_trace(scenario: PhishingScenario, horizon: float, seed) -> GeneratedTrace:
    """All threads are delivered at t=0; malicious-thread recipients who click are infected on opening."""
    run = simulate_phishing(scenario, horizon, seed)
    events = [EmailEvent(0.0, k, tuple(int(n) for n in lst)) for k, lst in enumerate(run.lists)]
    state = InfectionState(sources=tuple(int(k) for k in run.malicious_threads))
    for node in np.flatnonzero(np.isfinite(run.infection_times)):
        state.infect(int(node), run.infection_times[node])
    return GeneratedTrace(events, state)


# -- waterhole ---------------------------------------------------------------


def server_rates(scenario: WaterholeScenario) -> np.ndarray:
    """Request rates of the watched servers, log-uniformly spread over ``rate_range``.

    Rates sit at the mid-quantiles of the log-uniform law, so the watchlist's
    total load is a property of the scenario rather than of the run seed; the
    compromised server is pinned to ``compromised_rate``.
    """
    lo, hi = scenario.rate_range
    q = (np.arange(scenario.server_count) + 0.5) / scenario.server_count
    rates = np.exp(math.log(lo) + q * (math.log(hi) - math.log(lo)))
    rates[scenario.compromised_server] = scenario.compromised_rate
    return rates


@dataclass
class AccessLog:
    times: np.ndarray
    clients: np.ndarray
    servers: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def events(self) -> list[AccessEvent]:
        return [AccessEvent(float(t), int(c), int(s)) for t, c, s in zip(self.times, self.clients, self.servers)]


@dataclass
class WaterholeRun:
    log: AccessLog
    rates: np.ndarray
    compromise_time: float
    infection_times: np.ndarray


def simulate_waterhole(scenario: WaterholeScenario, horizon: float, seed) -> WaterholeRun:
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    rng = np.random.default_rng(seed)
    rates = server_rates(scenario)
    compromise = scenario.compromise_time
    if compromise is None:
        compromise = float(rng.uniform(0.0, horizon / 2))
    counts = rng.poisson(rates * horizon)
    servers = np.repeat(np.arange(scenario.server_count), counts)
    times = rng.uniform(0.0, horizon, len(servers))
    clients = rng.integers(0, scenario.client_population, len(servers))
    order = np.lexsort((servers, times))
    log = AccessLog(times[order], clients[order], servers[order])
    hit = (log.servers == scenario.compromised_server) & (log.times >= compromise)
    hit &= rng.random(len(log)) < scenario.infection_probability
    infected = np.full(scenario.client_population, np.inf)
    np.minimum.at(infected, log.clients[hit], log.times[hit])
    return WaterholeRun(log, rates, compromise, infected)


def generate_waterhole_trace(scenario: WaterholeScenario, horizon: float, seed) -> GeneratedTrace:
    """Poisson request streams per server; post-compromise visits infect with the configured probability."""
    run = simulate_waterhole(scenario, horizon, seed)
    state = InfectionState(sources=(scenario.compromised_server,))
    for node in np.flatnonzero(np.isfinite(run.infection_times)):
        state.infect(int(node), run.infection_times[node])
    return GeneratedTrace(run.log.events(), state)


# -- feature-vector overlay --------------------------------------------------


def _draw_alerts(ld, model, nodes, seconds, mal, rng) -> AlertBatch:
    p = np.where(mal, alert_probability(ld, model, ClassLabel.MALICIOUS), alert_probability(ld, model, ClassLabel.BENIGN))
    fire = rng.random(len(p)) < p
    nodes, seconds, mal = nodes[fire], seconds[fire], mal[fire]
    fvs = np.empty((len(nodes), model.dims))
    fvs[~mal] = sample_alert_fvs(ld, model, ClassLabel.BENIGN, int((~mal).sum()), rng)
    fvs[mal] = sample_alert_fvs(ld, model, ClassLabel.MALICIOUS, int(mal.sum()), rng)
    return AlertBatch(seconds.astype(float), nodes.astype(np.int64), fvs, mal)


def simulate_alerts(
    ld: LocalDetector,
    model,
    infection_times: np.ndarray,
    start: int,
    stop: int,
    rng: np.random.Generator,
    block: int = 2_000_000,
) -> AlertBatch:
    """Alert-FVs raised by every node emitting one FV per second over ``[start, stop)``.

    Each node-second is labelled by the infection schedule and raises an alert
    with the detector's exact per-class probability; only the alerting FVs are
    then drawn, from the class distribution conditioned on the alert. This is
    equivalent in law to drawing every FV and classifying it.
    """
    infection_times = np.asarray(infection_times, dtype=float)
    n = len(infection_times)
    per_step = max(1, block // max(n, 1))
    parts = []
    for t0 in range(start, stop, per_step):
        secs = np.arange(t0, min(stop, t0 + per_step))
        nodes = np.tile(np.arange(n), len(secs))
        seconds = np.repeat(secs, n)
        parts.append(_draw_alerts(ld, model, nodes, seconds, infection_times[nodes] <= seconds, rng))
    return AlertBatch.concat(parts, model.dims) if parts else AlertBatch.empty(model.dims)


def simulate_alerts_near(
    ld: LocalDetector,
    model,
    infection_times: np.ndarray,
    access_nodes: np.ndarray,
    access_times: np.ndarray,
    reach: int,
    start: int,
    stop: int,
    rng: np.random.Generator,
) -> AlertBatch:
    """Like :func:`simulate_alerts`, restricted to node-seconds within ``reach`` of an access.

    An alert at second s can only enter a sliding window of length at most
    ``reach`` together with its node if the node accessed a watched server
    at some a with |a - s| < reach. Other node-seconds never reach a
    neighbourhood, so skipping them leaves every window's contents unchanged
    in law.
    """
    infection_times = np.asarray(infection_times, dtype=float)
    a = np.asarray(access_times, dtype=float)
    lo = np.clip(np.floor(a).astype(np.int64) - reach + 1, start, stop)
    hi = np.clip(np.ceil(a).astype(np.int64) + reach, start, stop)
    order = np.lexsort((lo, access_nodes))
    node, lo, hi = np.asarray(access_nodes)[order], lo[order], hi[order]
    new_node = np.r_[True, node[1:] != node[:-1]]
    offset = (np.cumsum(new_node) - 1) * (stop + 1)
    reach_so_far = np.maximum.accumulate(hi + offset)
    run_start = new_node | (lo + offset > np.r_[-1, reach_so_far[:-1]])
    starts = np.flatnonzero(run_start)
    node, lo, hi = node[starts], lo[starts], np.maximum.reduceat(hi, starts)
    length = hi - lo
    nodes = np.repeat(node, length)
    seconds = np.arange(length.sum()) - np.repeat(np.cumsum(length) - length - lo, length)
    order = np.lexsort((nodes, seconds))
    nodes, seconds = nodes[order], seconds[order]
    return _draw_alerts(ld, model, nodes, seconds, infection_times[nodes] <= seconds, rng)
