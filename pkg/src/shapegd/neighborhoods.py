"""Neighbourhoods: sets of nodes that share an action attribute within a time window.

Two templates are supported. A waterhole neighbourhood collects the clients
that accessed any server of a partition group; a phishing neighbourhood
collects the recipients of any mailing list of a group. Batch mode tiles time
into windows ``[start, start + ntw)``; online mode slides a window ``(t - ntw, t]``
one second at a time.

Besides the object-level engines, :func:`batch_sweep` and :func:`online_sweep`
evaluate every neighbourhood at every evaluation instant in one vectorised
pass over columnar alert data. They implement the same membership and window
rules and are cross-checked against the engines in the tests.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterable, Mapping, Sequence, Union

import numpy as np

from .local import AlertBatch, AlertFV


class TemplateType(str, Enum):
    WATERHOLE = "waterhole"
    PHISHING = "phishing"


@dataclass(frozen=True)
class AccessEvent:
    timestamp: float
    client_id: Hashable
    server_id: Hashable

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError("timestamp must be >= 0")


@dataclass(frozen=True)
class EmailEvent:
    timestamp: float
    list_id: Hashable
    recipient_ids: tuple

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError("timestamp must be >= 0")
        object.__setattr__(self, "recipient_ids", tuple(self.recipient_ids))
        if not self.recipient_ids:
            raise ValueError("an email needs at least one recipient")


TraceEvent = Union[AccessEvent, EmailEvent]


def _event_attribute(event: TraceEvent) -> Hashable:
    return event.server_id if isinstance(event, AccessEvent) else event.list_id


def _event_nodes(event: TraceEvent) -> tuple:
    return (event.client_id,) if isinstance(event, AccessEvent) else event.recipient_ids


def _check_template(template: TemplateType, event: TraceEvent) -> None:
    want = AccessEvent if TemplateType(template) is TemplateType.WATERHOLE else EmailEvent
    if not isinstance(event, want):
        raise ValueError(f"{type(event).__name__} does not fit the {TemplateType(template).value} template")


class PartitionError(KeyError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    """Assignment of servers (or mailing lists) to ``group_count`` disjoint groups."""

    group_count: int
    assignment: Mapping[Hashable, int]

    def __post_init__(self):
        if self.group_count < 1:
            raise ValueError("group_count must be >= 1")
        used = set(self.assignment.values())
        if not used <= set(range(self.group_count)):
            raise ValueError("assignment refers to a group index outside [0, group_count)")
        if len(used) != self.group_count:
            raise ValueError("every group must be non-empty")
        object.__setattr__(self, "assignment", dict(self.assignment))

    @classmethod
    def contiguous(cls, ids: Iterable[Hashable], group_count: int) -> "PartitionSpec":
        """Sort ids and cut them into ``group_count`` contiguous runs of equal size (±1)."""
        ordered = sorted(set(ids))
        if not 1 <= group_count <= len(ordered):
            raise ValueError(f"cannot split {len(ordered)} ids into {group_count} non-empty groups")
        bounds = np.linspace(0, len(ordered), group_count + 1).round().astype(int)
        assignment = {}
        for g in range(group_count):
            for key in ordered[bounds[g] : bounds[g + 1]]:
                assignment[key] = g
        return cls(group_count, assignment)

    def group_of(self, key: Hashable) -> int:
        try:
            return self.assignment[key]
        except KeyError:
            raise PartitionError(f"id {key!r} is not covered by the partition") from None

    def members(self, group: int) -> list:
        return sorted(k for k, g in self.assignment.items() if g == group)


@dataclass
class DropCounter:
    non_member: int = 0
    out_of_window: int = 0
    late: int = 0


@dataclass
class Neighborhood:
    id: tuple
    member_nodes: frozenset
    partition_label: int
    window_start: float
    expiration_time: float
    alert_fvs: list = field(default_factory=list)
    total_fv_count: int = 0

    def contains_time(self, timestamp: float) -> bool:
        return self.window_start <= timestamp < self.expiration_time

    def alert_batch(self, dims: int) -> AlertBatch:
        return AlertBatch.from_alerts(self.alert_fvs, dims)


def _fv_count(members: int, seconds: float, rate: float) -> int:
    return int(round(members * max(seconds, 0.0) * rate))


def _group_members(template, events, partition) -> dict:
    groups: dict[int, set] = {}
    for ev in events:
        _check_template(template, ev)
        g = partition.group_of(_event_attribute(ev))
        groups.setdefault(g, set()).update(_event_nodes(ev))
    return groups


def instantiate_neighborhoods(
    template: TemplateType,
    events: Sequence[TraceEvent],
    ntw: float,
    partition: PartitionSpec,
    window_start: float,
    rate: float = 1.0,
) -> list[Neighborhood]:
    """One neighbourhood per partition group with at least one qualifying node."""
    if ntw <= 0:
        raise ValueError("ntw must be > 0")
    end = window_start + ntw
    for ev in events:
        if not window_start <= ev.timestamp < end:
            raise ValueError(f"event at {ev.timestamp} lies outside [{window_start}, {end})")
    template = TemplateType(template)
    groups = _group_members(template, events, partition)
    return [
        Neighborhood(
            id=(template.value, window_start, g),
            member_nodes=frozenset(nodes),
            partition_label=g,
            window_start=window_start,
            expiration_time=end,
            total_fv_count=_fv_count(len(nodes), ntw, rate),
        )
        for g, nodes in sorted(groups.items())
    ]


def route_alert(nbds: Iterable[Neighborhood], alert: AlertFV, drops: DropCounter | None = None) -> int:
    """Append ``alert`` to every neighbourhood that has its node and covers its time.

    Returns the number of neighbourhoods that accepted it.
    """
    accepted = 0
    member_somewhere = False
    for nb in nbds:
        if alert.node_id not in nb.member_nodes:
            continue
        member_somewhere = True
        if nb.contains_time(alert.timestamp):
            nb.alert_fvs.append(alert)
            accepted += 1
    if drops is not None and not accepted:
        if member_somewhere:
            drops.out_of_window += 1
        else:
            drops.non_member += 1
    return accepted


class BatchEngine:
    """Tumbling windows of length ``ntw``; each window forms its neighbourhoods once."""

    def __init__(self, template: TemplateType, ntw: float, partition: PartitionSpec, window_start: float = 0.0, rate: float = 1.0):
        if ntw <= 0:
            raise ValueError("ntw must be > 0")
        self.template = TemplateType(template)
        self.ntw = float(ntw)
        self.partition = partition
        self.window_start = float(window_start)
        self.rate = float(rate)
        self.drops = DropCounter()
        self._events: list[TraceEvent] = []
        self._alerts: list[AlertFV] = []

    @property
    def window_end(self) -> float:
        return self.window_start + self.ntw

    def ingest(self, item) -> None:
        if item.timestamp < self.window_start:
            self.drops.late += 1
            return
        if isinstance(item, AlertFV):
            self._alerts.append(item)
        else:
            _check_template(self.template, item)
            self._events.append(item)

    def _form(self, start: float, cutoff: float) -> list[Neighborhood]:
        events = [e for e in self._events if start <= e.timestamp < cutoff]
        groups = _group_members(self.template, events, self.partition)
        nbds = [
            Neighborhood(
                id=(self.template.value, start, g),
                member_nodes=frozenset(nodes),
                partition_label=g,
                window_start=start,
                expiration_time=start + self.ntw,
                total_fv_count=_fv_count(len(nodes), cutoff - start, self.rate),
            )
            for g, nodes in sorted(groups.items())
        ]
        for alert in self._alerts:
            if start <= alert.timestamp < cutoff:
                route_alert(nbds, alert, self.drops)
        return nbds

    def snapshot(self, now: float) -> list[Neighborhood]:
        """Neighbourhoods of the open window as seen from events and alerts before ``now``."""
        return self._form(self.window_start, min(max(now, self.window_start), self.window_end))

    def advance_batch(self, now: float) -> tuple[list[Neighborhood], list[Neighborhood]]:
        if now < self.window_end:
            raise ValueError(f"now={now} precedes the window end {self.window_end}")
        expired = []
        while now >= self.window_end:
            end = self.window_end
            expired.extend(self._form(self.window_start, end))
            self._events = [e for e in self._events if e.timestamp >= end]
            self._alerts = [a for a in self._alerts if a.timestamp >= end]
            self.window_start = end
        return expired, self.snapshot(self.window_end)


@dataclass(frozen=True)
class OnlineTrigger:
    time: int
    neighborhoods: list


class OnlineEngine:
    """Sliding window ``(t - ntw, t]`` advanced in one-second steps.

    Items for the open step ``(time, time + 1]`` may arrive in any order;
    anything stamped at or before the last completed step is dropped and
    counted in ``drops.late``.
    """

    def __init__(self, template: TemplateType, ntw: int, partition: PartitionSpec, rate: float = 1.0, start: int = 0):
        if ntw < 1 or int(ntw) != ntw:
            raise ValueError("online ntw must be a positive whole number of seconds")
        self.template = TemplateType(template)
        self.ntw = int(ntw)
        self.partition = partition
        self.rate = float(rate)
        self.start = int(start)
        self.time = self.start - 1
        self.drops = DropCounter()
        self._pending: list = []
        self._events: deque = deque()
        self._alerts: deque = deque()

    def online_update(self, item, now: float) -> list[OnlineTrigger]:
        if item is not None:
            if item.timestamp <= self.time:
                self.drops.late += 1
            else:
                if not isinstance(item, AlertFV):
                    _check_template(self.template, item)
                self._pending.append(item)
        triggers = []
        for t in range(self.time + 1, math.floor(now) + 1):
            self._pending.sort(key=lambda x: x.timestamp)
            cut = 0
            while cut < len(self._pending) and self._pending[cut].timestamp <= t:
                item = self._pending[cut]
                (self._alerts if isinstance(item, AlertFV) else self._events).append(item)
                cut += 1
            del self._pending[:cut]
            for q in (self._events, self._alerts):
                while q and q[0].timestamp <= t - self.ntw:
                    q.popleft()
            self.time = t
            triggers.append(OnlineTrigger(t, self._neighborhoods_at(t)))
        return triggers

    def _neighborhoods_at(self, t: int) -> list[Neighborhood]:
        groups = _group_members(self.template, self._events, self.partition)
        seconds = min(self.ntw, t - self.start + 1)
        nbds = [
            Neighborhood(
                id=(self.template.value, t, g),
                member_nodes=frozenset(nodes),
                partition_label=g,
                window_start=t - self.ntw,
                expiration_time=t,
                total_fv_count=_fv_count(len(nodes), seconds, self.rate),
            )
            for g, nodes in sorted(groups.items())
        ]
        for alert in self._alerts:
            for nb in nbds:
                if alert.node_id in nb.member_nodes:
                    nb.alert_fvs.append(alert)
        return nbds


# ---------------------------------------------------------------------------
# vectorised sweeps


@dataclass
class SweepResult:
    """Per-group, per-instant aggregates of a sweep.

    ``counts[g, i]`` holds the (L, b) bin counts of the alert-FVs of group ``g``
    at evaluation instant ``times[i]``; ``fv_sums`` the coordinate sums of the
    same alerts; ``infected`` the number of members already infected.
    """

    times: np.ndarray
    members: np.ndarray
    fv_counts: np.ndarray
    alert_counts: np.ndarray
    counts: np.ndarray
    fv_sums: np.ndarray
    infected: np.ndarray


@dataclass
class _Intervals:
    node: np.ndarray
    group: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def _merge_intervals(node, group, lo, hi) -> _Intervals:
    """Union of half-open index intervals per (node, group), sorted by node."""
    node = np.asarray(node, dtype=np.int64)
    group = np.asarray(group, dtype=np.int64)
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    keep = hi > lo
    node, group, lo, hi = node[keep], group[keep], lo[keep], hi[keep]
    if len(node) == 0:
        return _Intervals(node, group, lo, hi)
    order = np.lexsort((lo, group, node))
    node, group, lo, hi = node[order], group[order], lo[order], hi[order]
    new_pair = np.r_[True, (node[1:] != node[:-1]) | (group[1:] != group[:-1])]
    # offsetting each pair lifts a global running max into a per-pair one
    offset = (np.cumsum(new_pair) - 1) * (int(hi.max()) + 1)
    reach = np.maximum.accumulate(hi + offset)
    new_run = new_pair | (lo + offset > np.r_[-1, reach[:-1]])
    starts = np.flatnonzero(new_run)
    return _Intervals(node[starts], group[starts], lo[starts], np.maximum.reduceat(hi, starts))


def _overlaps(ivs: _Intervals, item_node, item_lo, item_hi):
    """All (item index, group, lo, hi) intersections of item spans with member intervals."""
    item_node = np.asarray(item_node, dtype=np.int64)
    first = np.searchsorted(ivs.node, item_node, side="left")
    last = np.searchsorted(ivs.node, item_node, side="right")
    out = [], [], [], []
    width = int((last - first).max()) if len(item_node) else 0
    for j in range(width):
        ok = np.flatnonzero(first + j < last)
        kk = first[ok] + j
        lo = np.maximum(item_lo[ok], ivs.lo[kk])
        hi = np.minimum(item_hi[ok], ivs.hi[kk])
        hit = hi > lo
        for bucket, values in zip(out, (ok[hit], ivs.group[kk][hit], lo[hit], hi[hit])):
            bucket.append(values)
    if width == 0:
        return tuple(np.empty(0, dtype=np.int64) for _ in range(4))
    return tuple(np.concatenate(bucket) for bucket in out)


class _DiffGrid:
    """Difference array over (group, time, cell); each contribution covers a time span."""

    def __init__(self, n_groups: int, n_times: int, cells: int):
        self.shape = (n_groups, n_times + 1, cells)
        self.diff = np.zeros(int(np.prod(self.shape)))

    def add(self, g, lo, hi, cell=0, weights=None) -> None:
        _, span, cells = self.shape
        base = g * span * cells + cell
        start = np.ravel(base + lo * cells)
        stop = np.ravel(base + hi * cells)
        w = np.ones(start.shape) if weights is None else np.ravel(weights)
        n = len(self.diff)
        self.diff += np.bincount(start, weights=w, minlength=n)
        self.diff -= np.bincount(stop, weights=w, minlength=n)

    def total(self) -> np.ndarray:
        return np.cumsum(self.diff.reshape(self.shape), axis=1)[:, :-1]


def _sweep(ivs, n_groups, times, fv_seconds, rate, alert_nodes, alert_lo, alert_hi, alert_bins, alert_fvs, inf_nodes, inf_lo, bins, chunk):
    T = len(times)
    L = alert_bins.shape[1]
    grid_members = _DiffGrid(n_groups, T, 1)
    grid_members.add(ivs.group, ivs.lo, ivs.hi)
    grid_counts = _DiffGrid(n_groups, T, L * bins)
    grid_sums = _DiffGrid(n_groups, T, L)
    grid_alerts = _DiffGrid(n_groups, T, 1)
    cell_of_dim = np.arange(L)
    for s in range(0, len(alert_nodes), chunk):
        i, g, lo, hi = _overlaps(ivs, alert_nodes[s : s + chunk], alert_lo[s : s + chunk], alert_hi[s : s + chunk])
        if len(i) == 0:
            continue
        i = i + s
        g, lo, hi = g[:, None], lo[:, None], hi[:, None]
        grid_counts.add(g, lo, hi, cell_of_dim * bins + alert_bins[i])
        grid_sums.add(g, lo, hi, cell_of_dim, alert_fvs[i])
        grid_alerts.add(g[:, 0], lo[:, 0], hi[:, 0])
    grid_infected = _DiffGrid(n_groups, T, 1)
    _, g, lo, hi = _overlaps(ivs, inf_nodes, inf_lo, np.full(len(inf_lo), T, dtype=np.int64))
    grid_infected.add(g, lo, hi)
    members = np.rint(grid_members.total()[..., 0]).astype(np.int64)
    return SweepResult(
        times=np.asarray(times),
        members=members,
        fv_counts=np.rint(members * np.asarray(fv_seconds, dtype=float)[None, :] * rate).astype(np.int64),
        alert_counts=np.rint(grid_alerts.total()[..., 0]).astype(np.int64),
        counts=np.rint(grid_counts.total()).astype(np.int64).reshape(n_groups, T, L, bins),
        fv_sums=grid_sums.total(),
        infected=np.rint(grid_infected.total()[..., 0]).astype(np.int64),
    )


def _infection_arrays(infection_times) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(infection_times, dtype=float)
    nodes = np.flatnonzero(np.isfinite(t))
    return nodes, t[nodes]


def batch_sweep(
    member_nodes,
    member_groups,
    join_times,
    n_groups: int,
    window_start: float,
    check_times,
    alerts: AlertBatch,
    alert_bins: np.ndarray,
    bins: int,
    infection_times=None,
    rate: float = 1.0,
    chunk: int = 200_000,
) -> SweepResult:
    """Evaluate batch neighbourhoods of one window at intra-window check times.

    At check time ``c`` a node belongs to group ``g`` if it joined before ``c``;
    its alerts stamped in ``[window_start, c)`` count. ``infection_times`` is a
    per-node array (``inf`` = never infected).
    """
    checks = np.asarray(check_times, dtype=float)
    if np.any(np.diff(checks) <= 0) or len(checks) == 0:
        raise ValueError("check_times must be strictly increasing and non-empty")
    T = len(checks)
    first_check = lambda t: np.searchsorted(checks, np.asarray(t, dtype=float), side="right")
    ivs = _merge_intervals(member_nodes, member_groups, first_check(join_times), np.full(len(join_times), T))
    in_window = alerts.times >= window_start
    sel = np.flatnonzero(in_window & (alerts.times < checks[-1]))
    inf_nodes, inf_t = _infection_arrays(infection_times if infection_times is not None else np.empty(0))
    return _sweep(
        ivs, n_groups, checks, checks - window_start, rate,
        alerts.nodes[sel], first_check(alerts.times[sel]), np.full(len(sel), T, dtype=np.int64),
        alert_bins[sel], alerts.fvs[sel], inf_nodes, first_check(inf_t), bins, chunk,
    )


def online_sweep(
    access_nodes,
    access_groups,
    access_times,
    n_groups: int,
    ntw: int,
    horizon: int,
    alerts: AlertBatch,
    alert_bins: np.ndarray,
    bins: int,
    infection_times=None,
    rate: float = 1.0,
    start: int = 0,
    chunk: int = 200_000,
) -> SweepResult:
    """Evaluate sliding neighbourhoods ``(t - ntw, t]`` at every integer ``t`` in ``[start, horizon)``.

    A node is a member at ``t`` if it accessed a group server in the window;
    its alerts stamped in the window count. Infected members are those
    infected at or before ``t``.
    """
    if ntw < 1 or int(ntw) != ntw:
        raise ValueError("online ntw must be a positive whole number of seconds")
    times = np.arange(start, horizon)
    T = len(times)
    idx = lambda t: np.ceil(np.asarray(t, dtype=float)).astype(np.int64) - start
    a0 = idx(access_times)
    ivs = _merge_intervals(access_nodes, access_groups, np.clip(a0, 0, T), np.clip(a0 + ntw, 0, T))
    s0 = idx(alerts.times)
    inf_nodes, inf_t = _infection_arrays(infection_times if infection_times is not None else np.empty(0))
    seconds = np.minimum(ntw, times - start + 1)
    return _sweep(
        ivs, n_groups, times, seconds, rate,
        alerts.nodes, np.clip(s0, 0, T), np.clip(s0 + ntw, 0, T),
        alert_bins, alerts.fvs, inf_nodes, np.clip(idx(inf_t), 0, T), bins, chunk,
    )
