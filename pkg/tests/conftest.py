import pytest
from hypothesis import HealthCheck, settings

from sgphase.params import baseline_config, short_protocol_config

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def baseline():
    return baseline_config()


@pytest.fixture(scope="session")
def baseline_codata():
    return baseline_config("codata")


@pytest.fixture(scope="session")
def short_protocol():
    return short_protocol_config()
