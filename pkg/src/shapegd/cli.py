"""Command-line experiment harness.

Every subcommand reads one TOML config, writes its tables into ``--out``
and prints a single summary line. Outputs depend only on the config and
seed, so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .attacks import generate_phishing_trace, generate_waterhole_trace
from .config import ConfigError, ExperimentConfig, child_seed, load_config
from .formats import FormatError, read_csv, verdict_record, write_csv, write_infections, write_reference, write_trace
from .global_detectors import Decision, GlobalVerdict
from .metrics import compute_roc


def _finite(x):
    return None if x is None or not math.isfinite(x) else x


def cmd_gen_trace(cfg: ExperimentConfig, out: Path) -> str:
    t = cfg.trace
    seed = child_seed(cfg.seed, "trace", t.scenario)
    if t.scenario == "phishing":
        trace = generate_phishing_trace(ex.phishing_scenario(cfg), t.horizon, seed)
    else:
        trace = generate_waterhole_trace(ex.waterhole_scenario(cfg), t.horizon, seed)
    n = write_trace(out / "trace.txt", trace.events)
    write_infections(out / "infections.txt", trace.infections)
    return f"gen-trace: {t.scenario}, {n} events, {len(trace.infections)} infections over {t.horizon} s"


def cmd_train_ref(cfg: ExperimentConfig, out: Path) -> str:
    det = ex.prepare_detector(cfg)
    setup = ex.prepare_shape(cfg, det, cfg.shape.reference_budget, "train-ref")
    write_reference(out / "reference.txt", setup.ref, setup.gamma)
    write_csv(out / "benign_scores.csv", ["index", "score"], enumerate(setup.benign_scores.tolist()))
    write_csv(
        out / "detector.csv",
        ["separation", "exact_fp", "exact_tp", "held_out_fp", "held_out_tp", "training_fp"],
        [[det.model.separation, det.exact.fp_rate, det.exact.tp_rate, det.held_out.fp_rate, det.held_out.tp_rate, det.training_fp]],
    )
    return (
        f"train-ref: {setup.ref.alert_count} alerts from {setup.ref.training_fv_count} FVs, "
        f"gamma={setup.gamma.gamma:.4f}, LD fp={det.exact.fp_rate:.4f} tp={det.exact.tp_rate:.4f}"
    )


def cmd_pure_shape(cfg: ExperimentConfig, out: Path) -> str:
    res = ex.run_pure_shape_experiment(cfg)
    rows = [["benign", i, s] for i, s in enumerate(res.benign_scores.tolist())]
    rows += [["malicious", i, s] for i, s in enumerate(res.malicious_scores.tolist())]
    write_csv(out / "pure_shape_scores.csv", ["label", "index", "score"], rows)
    write_csv(
        out / "pure_shape_summary.csv",
        ["bins", "gamma", "fp_rate", "tp_rate", "benign_max", "malicious_min", "gap"],
        [[cfg.shape.bins, res.gamma.gamma, res.fp_rate, res.tp_rate, float(res.benign_scores.max()), float(res.malicious_scores.min()), res.gap]],
    )
    return f"pure-shape: gamma={res.gamma.gamma:.4f} fp={res.fp_rate:.4f} tp={res.tp_rate:.4f} gap={res.gap:.4f}"


def cmd_detect_sweep(cfg: ExperimentConfig, out: Path) -> str:
    points = ex.run_detection_sweep(cfg)
    outcome_rows, summary_rows, verdicts = [], [], []
    for pt in points:
        key = [pt.scenario, pt.parameter, pt.ntw, pt.group_count]
        for o in pt.outcomes:
            outcome_rows.append(key + [o.rep, o.detected, o.detection_time, o.infected_at_detection, o.infected_end, o.false_alarm_neighborhoods, o.neighborhoods])
            for v in o.verdicts:
                nid = f"{pt.parameter!r}/{pt.ntw}/{pt.group_count}/{o.rep}/{v.group}"
                score = math.nan if v.score is None else v.score
                verdicts.append(verdict_record(v.window_start, GlobalVerdict(nid, Decision(v.decision), score, v.fv_count)))
        s = pt.infected_summary()
        summary_rows.append(key + [len(pt.outcomes), s.count, s.censored, _finite(s.median), _finite(s.low), _finite(s.high), pt.false_alarm_rate()])
    write_csv(
        out / "detection_outcomes.csv",
        ["scenario", "parameter", "ntw", "group_count", "rep", "detected", "detection_time", "infected_at_detection", "infected_end", "false_alarm_neighborhoods", "neighborhoods"],
        outcome_rows,
    )
    write_csv(
        out / "detection_summary.csv",
        ["scenario", "parameter", "ntw", "group_count", "repetitions", "detected", "censored", "median_infected", "whisker_low", "whisker_high", "false_alarm_rate"],
        summary_rows,
    )
    (out / "verdicts.txt").write_text("".join(line + "\n" for line in verdicts), encoding="utf-8")
    parts = [
        f"{p.parameter:g}/{p.ntw}s/k={p.group_count}: median {p.infected_summary().median:g} ({p.infected_summary().censored} censored)"
        for p in points
    ]
    return f"detect-sweep {cfg.detect_sweep.scenario}: " + "; ".join(parts)


def cmd_count_fragility(cfg: ExperimentConfig, out: Path) -> str:
    res = ex.run_count_fragility(cfg)
    write_csv(
        out / "count_fragility.csv",
        ["size_error", "threshold", "fp_rate", "tp_rate"],
        [[e, t, fp, tp] for e, t, fp, tp in zip(res.errors, res.tau, res.fp, res.tp)],
    )
    write_csv(out / "shape_levels.csv", ["infected_fraction", "shape_fp", "shape_tp"], res.fraction_table)
    return f"count-fragility: infected fraction {res.infected_fraction:g} (shape fp={res.shape_fp:.3f} tp={res.shape_tp:.3f}), {len(res.errors)} error points"


def cmd_cluster_auc(cfg: ExperimentConfig, out: Path) -> str:
    res = ex.run_cluster_auc(cfg)
    rows = []
    for i in range(len(res.eval_times)):
        rows.append([i, res.eval_times[i], res.infected[i], "attacked", res.cluster_scores_pos[i], res.shape_scores_pos[i]])
        rows.append([i, res.eval_times[i], 0, "control", res.cluster_scores_neg[i], res.shape_scores_neg[i]])
    write_csv(out / "cluster_auc_scores.csv", ["run", "eval_time", "infected", "label", "centroid_distance", "shape_score"], rows)
    write_csv(
        out / "cluster_auc_summary.csv",
        ["runs", "cluster_auc", "shape_auc", "shape_tp", "shape_fp"],
        [[len(res.eval_times), res.cluster_auc, res.shape_auc, res.shape_tp, res.shape_fp]],
    )
    return f"cluster-auc: {len(res.eval_times)} runs, centroid AUC={res.cluster_auc:.3f}, shape AUC={res.shape_auc:.3f}"


def cmd_roc(cfg: ExperimentConfig, out: Path) -> str:
    r = cfg.roc
    if not r.input:
        raise ConfigError("roc.input must name a CSV of scores and labels")
    path = cfg.resolve(r.input)
    if not path.exists():
        raise FileNotFoundError(f"roc input not found: {path}")
    header, rows = read_csv(path)
    for col in (r.score_column, r.label_column):
        if col not in header:
            raise FormatError(f"{path}: missing column {col!r}")
    si, li = header.index(r.score_column), header.index(r.label_column)
    try:
        scores = np.array([float(row[si]) for row in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    positive = np.array([row[li] == r.positive_label for row in rows])
    roc = compute_roc(scores[positive], scores[~positive])
    thresholds = [None if not math.isfinite(t) else t for t in roc.thresholds.tolist()]
    write_csv(out / "roc.csv", ["threshold", "fp_rate", "tp_rate"], zip(thresholds, roc.fp_rates.tolist(), roc.tp_rates.tolist()))
    write_csv(out / "auc.csv", ["positives", "negatives", "auc"], [[int(positive.sum()), int((~positive).sum()), roc.auc]])
    return f"roc: {int(positive.sum())} positive, {int((~positive).sum())} negative, AUC={roc.auc:.4f}"


COMMANDS = {
    "gen-trace": (cmd_gen_trace, "simulate a phishing or waterhole trace with its infection sidecar"),
    "train-ref": (cmd_train_ref, "train the reference histogram and calibrate gamma"),
    "pure-shape": (cmd_pure_shape, "benign versus malicious ShapeScores at a fixed neighbourhood size"),
    "detect-sweep": (cmd_detect_sweep, "infected-at-detection over NTW, group-count and infection sweeps"),
    "count-fragility": (cmd_count_fragility, "Count-GD rates versus neighbourhood-size error"),
    "cluster-auc": (cmd_cluster_auc, "centroid-distance versus ShapeScore AUC at low infection"),
    "roc": (cmd_roc, "ROC curve and AUC from a scored CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapegd", description="Shape-based global detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        if cfg.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        print(COMMANDS[args.command][0](cfg, out))
    except (ConfigError, FormatError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"shapegd {args.command}: error: {exc}", file=sys.stderr)
        print(parser.format_usage(), end="", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
