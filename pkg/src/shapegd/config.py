"""Experiment configuration: a TOML file mapped onto typed sections with defaults."""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    dims: int = 10
    active_dims: int = 5
    target_fp: float = 0.06
    target_tp: float = 0.924
    malicious_scale: float | None = None
    calibration_samples: int = 200_000
    ld_training_samples: int = 500_000

    def validate(self):
        _require(1 <= self.active_dims <= self.dims, "model.active_dims must lie in [1, dims]")
        _require(0 < self.target_fp < self.target_tp < 1, "model needs 0 < target_fp < target_tp < 1")
        _require(self.malicious_scale is None or self.malicious_scale > 0, "model.malicious_scale must be > 0")
        _require(self.calibration_samples >= 1000, "model.calibration_samples must be >= 1000")
        _require(self.ld_training_samples >= 1000, "model.ld_training_samples must be >= 1000")


@dataclass
class ShapeConfig:
    bins: int = 50
    percentile: float = 0.99
    min_fvs: int = 15_000
    neighborhood_fvs: int = 15_000
    gamma_neighborhoods: int = 500
    reference_budget: int = 100_000
    reference_min_alerts: int = 500

    def validate(self):
        _require(self.bins >= 2, "shape.bins must be >= 2")
        _require(0 < self.percentile <= 1, "shape.percentile must lie in (0, 1]")
        _require(self.neighborhood_fvs >= 1, "shape.neighborhood_fvs must be >= 1")
        _require(self.gamma_neighborhoods >= 1, "shape.gamma_neighborhoods must be >= 1")


@dataclass
class PureShapeConfig:
    benign_neighborhoods: int = 500
    malicious_neighborhoods: int = 500
    malicious_fraction: float = 1.0

    def validate(self):
        _require(self.benign_neighborhoods >= 1 and self.malicious_neighborhoods >= 1, "pure_shape needs >= 1 neighbourhood per class")
        _require(0 <= self.malicious_fraction <= 1, "pure_shape.malicious_fraction must lie in [0, 1]")


@dataclass
class PhishingConfig:
    thread_count: int = 50
    recipients_per_thread: int = 100
    universe_size: int = 1086
    malicious_thread_count: int = 1
    click_rate: float = 1.0
    open_time_median: float = 2820.0
    open_time_mode: float = 120.0
    ntw: list = field(default_factory=lambda: [3600])
    group_counts: list = field(default_factory=lambda: [1, 50])
    check_interval: int = 10
    reference_budget: int = 15_000

    def validate(self):
        _require(all(int(n) == n and n > 0 for n in self.ntw), "phishing.ntw values must be positive whole seconds")
        _require(all(1 <= k <= self.thread_count for k in self.group_counts), "phishing.group_counts must lie in [1, thread_count]")
        _require(self.check_interval >= 1, "phishing.check_interval must be >= 1")
        _require(0 <= self.click_rate <= 1, "phishing.click_rate must lie in [0, 1]")


@dataclass
class WaterholeConfig:
    server_count: int = 50
    client_population: int = 50_000
    infection_probability: float = 1.0
    rate_min: float = 0.5
    rate_max: float = 43.7
    compromised_rate: float = 43.7
    compromised_server: int = 0
    horizon: int = 300
    ntw: list = field(default_factory=lambda: [6])
    group_counts: list = field(default_factory=lambda: [1])
    reference_budget: int = 100_000
    rate_scale: float = 1.0

    def validate(self):
        _require(all(int(n) == n and n > 0 for n in self.ntw), "waterhole.ntw values must be positive whole seconds")
        _require(all(1 <= k <= self.server_count for k in self.group_counts), "waterhole.group_counts must lie in [1, server_count]")
        _require(self.horizon >= 2, "waterhole.horizon must be >= 2")
        _require(0 <= self.infection_probability <= 1, "waterhole.infection_probability must lie in [0, 1]")
        _require(0 < self.rate_min <= self.rate_max, "waterhole needs 0 < rate_min <= rate_max")
        _require(self.rate_scale > 0, "waterhole.rate_scale must be > 0")
        _require(0 <= self.compromised_server < self.server_count, "waterhole.compromised_server out of range")


@dataclass
class DetectSweepConfig:
    scenario: str = "phishing"
    repetitions: int = 50
    click_rates: list = field(default_factory=lambda: [1.0])
    infection_probabilities: list = field(default_factory=lambda: [1.0])
    workers: int = 1

    def validate(self):
        _require(self.scenario in ("phishing", "waterhole"), "detect_sweep.scenario must be phishing or waterhole")
        _require(self.repetitions >= 1, "detect_sweep.repetitions must be >= 1")
        _require(self.workers >= 1, "detect_sweep.workers must be >= 1")


@dataclass
class CountFragilityConfig:
    true_fv_count: int = 15_000
    infected_fractions: list = field(default_factory=lambda: [0.005, 0.01, 0.015, 0.02, 0.03, 0.05])
    runs: int = 500
    error_start: float = -0.05
    error_stop: float = 0.25
    error_step: float = 0.01
    extra_errors: list = field(default_factory=lambda: [-0.10])
    shape_min_tp: float = 0.95
    shape_max_fp: float = 0.02

    def validate(self):
        _require(self.runs >= 100, "count_fragility.runs must be >= 100")
        _require(self.error_step > 0 and self.error_stop >= self.error_start, "count_fragility error grid is empty")
        _require(all(e > -1 for e in self.errors()), "count_fragility errors must be > -1")
        _require(all(0 < f <= 1 for f in self.infected_fractions), "count_fragility.infected_fractions must lie in (0, 1]")

    def errors(self) -> list[float]:
        n = int(round((self.error_stop - self.error_start) / self.error_step)) + 1
        grid = {round(self.error_start + i * self.error_step, 10) for i in range(n)}
        grid |= {round(float(e), 10) for e in self.extra_errors}
        return sorted(grid)


@dataclass
class ClusterAucConfig:
    repetitions: int = 100
    max_infected_fraction: float = 0.02
    group_count: int = 1
    ntw: int = 3600

    def validate(self):
        _require(self.repetitions >= 2, "cluster_auc.repetitions must be >= 2")
        _require(0 < self.max_infected_fraction <= 1, "cluster_auc.max_infected_fraction must lie in (0, 1]")


@dataclass
class TraceConfig:
    scenario: str = "phishing"
    horizon: int = 3600

    def validate(self):
        _require(self.scenario in ("phishing", "waterhole"), "trace.scenario must be phishing or waterhole")
        _require(self.horizon > 0, "trace.horizon must be > 0")


@dataclass
class RocConfig:
    input: str = ""
    score_column: str = "score"
    label_column: str = "label"
    positive_label: str = "malicious"

    def validate(self):
        pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    shape: ShapeConfig = field(default_factory=ShapeConfig)
    pure_shape: PureShapeConfig = field(default_factory=PureShapeConfig)
    phishing: PhishingConfig = field(default_factory=PhishingConfig)
    waterhole: WaterholeConfig = field(default_factory=WaterholeConfig)
    detect_sweep: DetectSweepConfig = field(default_factory=DetectSweepConfig)
    count_fragility: CountFragilityConfig = field(default_factory=CountFragilityConfig)
    cluster_auc: ClusterAucConfig = field(default_factory=ClusterAucConfig)
    trace: TraceConfig = field(default_factory=TraceConfig)
    roc: RocConfig = field(default_factory=RocConfig)
    base_dir: Path = field(default_factory=Path.cwd)

    def validate(self) -> "ExperimentConfig":
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "validate"):
                value.validate()
        return self

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else dataclasses.replace(self, seed=int(seed))


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _coerce(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    out = {}
    for key, value in data.items():
        default = known[key].default if known[key].default is not dataclasses.MISSING else known[key].default_factory()
        if isinstance(default, list):
            if not isinstance(value, list):
                value = [value]
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be a boolean")
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be an integer")
        elif isinstance(default, float) or default is None:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be a number")
            value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be a string")
        out[key] = value
    return cls(**out)


_SECTIONS = {
    f.name: f.default_factory
    for f in dataclasses.fields(ExperimentConfig)
    if f.default_factory is not dataclasses.MISSING and f.name != "base_dir"
}


def config_from_dict(data: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    data = dict(data)
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    seed = data.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    sections = {name: _coerce(type(factory()), data.get(name, {}), name) for name, factory in _SECTIONS.items()}
    cfg = ExperimentConfig(seed=seed, base_dir=base_dir or Path.cwd(), **sections)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return config_from_dict(data, path.resolve().parent)


def child_seed(seed: int, *keys) -> np.random.SeedSequence:
    """Independent, name-addressed random stream derived from the run seed."""
    words = [int(seed)]
    for key in keys:
        words.append(zlib.crc32(str(key).encode()) if not isinstance(key, (int, np.integer)) else int(key))
    return np.random.SeedSequence(words)
