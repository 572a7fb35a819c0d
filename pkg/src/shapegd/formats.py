"""Line-oriented file formats: traces, infection sidecars, verdict logs, FV replays, references, CSV."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .attacks import InfectionState
from .global_detectors import GlobalVerdict
from .labels import ClassLabel
from .neighborhoods import AccessEvent, EmailEvent, TraceEvent
from .shape import GammaThreshold, ReferenceHistogram, VectorHistogram

REFERENCE_MAGIC = "shapegd-reference"
REFERENCE_VERSION = 1


class FormatError(ValueError):
    pass


def _parse_id(text: str):
    text = text.strip()
    if not text:
        raise FormatError("empty identifier")
    return int(text) if text.lstrip("-").isdigit() else text


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError("refusing to write a non-finite value")
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_trace(path, events: Iterable[TraceEvent]) -> int:
    last = -math.inf
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            if ev.timestamp < last:
                raise ValueError("trace events must be in non-decreasing time order")
            last = ev.timestamp
            if isinstance(ev, AccessEvent):
                fh.write(f"A,{_fmt(float(ev.timestamp))},{ev.client_id},{ev.server_id}\n")
            else:
                fh.write(f"E,{_fmt(float(ev.timestamp))},{ev.list_id},{';'.join(str(r) for r in ev.recipient_ids)}\n")
            n += 1
    return n


def read_trace(path) -> list[TraceEvent]:
    events: list[TraceEvent] = []
    last = -math.inf
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                ts = float(parts[1])
                if parts[0] == "A" and len(parts) == 4:
                    ev = AccessEvent(ts, _parse_id(parts[2]), _parse_id(parts[3]))
                elif parts[0] == "E" and len(parts) == 4:
                    ev = EmailEvent(ts, _parse_id(parts[2]), tuple(_parse_id(r) for r in parts[3].split(";")))
                else:
                    raise FormatError(f"unknown record {parts[0]!r}")
            except (IndexError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if ts < last:
                raise FormatError(f"{path}:{lineno}: timestamp {ts} goes backwards")
            last = ts
            events.append(ev)
    return events


def write_infections(path, infections: InfectionState) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for node, t in infections.items():
            fh.write(f"I,{_fmt(float(t))},{node}\n")


def read_infections(path) -> InfectionState:
    state = InfectionState()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3 or parts[0] != "I":
                raise FormatError(f"{path}:{lineno}: expected I,<timestamp>,<node_id>")
            state.infect(_parse_id(parts[2]), float(parts[1]))
    return state


def verdict_record(window_start: float, verdict: GlobalVerdict) -> str:
    score = "" if math.isnan(verdict.score) else _fmt(verdict.score)
    nid = verdict.neighborhood_id
    nid = "/".join(str(p) for p in nid) if isinstance(nid, tuple) else str(nid)
    return f"V,{_fmt(float(window_start))},{nid},{verdict.detector},{verdict.decision.value},{score},{verdict.eligible_fv_count}"


def write_fv_replay(path, rows: Iterable) -> None:
    """One FV per line: node_id, timestamp, label, then the L coordinates."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fv, node_id, timestamp, label in rows:
            coords = ",".join(_fmt(float(v)) for v in np.asarray(fv, dtype=float).ravel())
            fh.write(f"{node_id},{_fmt(float(timestamp))},{ClassLabel.parse(label).value},{coords}\n")


def read_fv_replay(path) -> Iterator[tuple]:
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                fv = np.array([float(v) for v in parts[3:]])
                if len(fv) == 0 or not np.all(np.isfinite(fv)):
                    raise FormatError("feature vector missing or non-finite")
                if dims is None:
                    dims = len(fv)
                elif len(fv) != dims:
                    raise FormatError(f"dimension {len(fv)} differs from earlier {dims}")
                yield fv, _parse_id(parts[0]), float(parts[1]), ClassLabel.parse(parts[2])
            except (IndexError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None


def write_reference(path, ref: ReferenceHistogram, gamma: GammaThreshold) -> None:
    h = ref.histogram
    lines = [
        f"{REFERENCE_MAGIC} {REFERENCE_VERSION}",
        f"dims {h.dims}",
        f"bins {h.bin_count}",
        f"percentile {_fmt(float(gamma.percentile))}",
        f"gamma {_fmt(float(gamma.gamma))}",
        f"training_fv_count {ref.training_fv_count}",
        f"alert_count {ref.alert_count}",
    ]
    for l in range(h.dims):
        lines.append(f"edges {l} " + ",".join(_fmt(float(v)) for v in h.bin_edges[l]))
    for l in range(h.dims):
        lines.append(f"weights {l} " + ",".join(_fmt(float(v)) for v in h.bins[l]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_reference(path) -> tuple[ReferenceHistogram, GammaThreshold]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split() != [REFERENCE_MAGIC, str(REFERENCE_VERSION)]:
        raise FormatError(f"{path}: not a version-{REFERENCE_VERSION} reference file")
    header, edges, weights = {}, {}, {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key in ("edges", "weights"):
            idx, _, values = rest.partition(" ")
            (edges if key == "edges" else weights)[int(idx)] = [float(v) for v in values.split(",")]
        elif key:
            header[key] = rest
    try:
        L, b = int(header["dims"]), int(header["bins"])
        E = np.array([edges[l] for l in range(L)])
        W = np.array([weights[l] for l in range(L)])
        gamma = GammaThreshold(float(header["gamma"]), float(header["percentile"]))
        training = int(header["training_fv_count"])
        alerts = int(header.get("alert_count", 0))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed reference ({exc})") from None
    if E.shape != (L, b + 1) or W.shape != (L, b):
        raise FormatError(f"{path}: edge or weight matrix has the wrong shape")
    return ReferenceHistogram(VectorHistogram(W, E), training, alerts), gamma


def write_csv(path, header: list[str], rows: Iterable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError("row length differs from header")
            w.writerow(["" if v is None else _fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]
