import pytest
from hypothesis import HealthCheck, settings

from shapegd import experiments as ex
from shapegd.config import ExperimentConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig(seed=0)


@pytest.fixture(scope="session")
def detector(cfg):
    return ex.prepare_detector(cfg)


@pytest.fixture(scope="session")
def phishing_setup(cfg, detector):
    return ex.prepare_shape(cfg, detector, cfg.phishing.reference_budget, "phishing")
