import numpy as np
import pytest

from shapegd.config import ConfigError, ExperimentConfig, child_seed, config_from_dict, load_config


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.shape.bins == 50 and cfg.shape.min_fvs == 15_000
    assert cfg.phishing.universe_size == 1086 and cfg.waterhole.client_population == 50_000
    errors = cfg.count_fragility.errors()
    assert errors[0] == -0.10 and 0.0 in errors and errors[-1] == 0.25 and len(errors) == 32


def test_sections_and_coercion(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('seed = 4\n[shape]\nbins = 20\n[phishing]\nntw = 7200\nclick_rate = 1\n')
    cfg = load_config(path)
    assert cfg.seed == 4 and cfg.shape.bins == 20
    assert cfg.phishing.ntw == [7200] and cfg.phishing.click_rate == 1.0
    assert cfg.base_dir == tmp_path
    assert cfg.with_seed(9).seed == 9 and cfg.with_seed(None).seed == 4


@pytest.mark.parametrize(
    "data",
    [
        {"nonsense": {}},
        {"shape": {"binz": 3}},
        {"shape": {"bins": "many"}},
        {"shape": {"bins": 2.5}},
        {"shape": {"bins": 1}},
        {"seed": -1},
        {"seed": True},
        {"detect_sweep": {"repetitions": 0}},
        {"detect_sweep": {"scenario": "ransomware"}},
        {"count_fragility": {"runs": 50}},
        {"phishing": {"group_counts": [51]}},
        {"waterhole": {"rate_scale": 0.0}},
        {"model": {"target_fp": 0.5, "target_tp": 0.4}},
        {"shape": 3},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[shape\nbins = 3")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_child_seeds():
    a = np.random.default_rng(child_seed(1, "phishing", 3)).random()
    assert a == np.random.default_rng(child_seed(1, "phishing", 3)).random()
    assert a != np.random.default_rng(child_seed(1, "phishing", 4)).random()
    assert a != np.random.default_rng(child_seed(2, "phishing", 3)).random()
    assert a != np.random.default_rng(child_seed(1, "waterhole", 3)).random()


def test_resolve(tmp_path):
    cfg = ExperimentConfig(base_dir=tmp_path)
    assert cfg.resolve("x.csv") == tmp_path / "x.csv"
    assert cfg.resolve("/abs/x.csv").as_posix() == "/abs/x.csv"
