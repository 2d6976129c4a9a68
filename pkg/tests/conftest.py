import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from subgroup_emtest._rng import derive_rng
from subgroup_emtest.simgen import generate_scenario, get_scenario, with_n

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def s1_data():
    """One normal Scenario-1 null dataset, n = 500."""
    return generate_scenario(with_n(get_scenario("normal-s1-null"), 500), derive_rng(2024, 0))


@pytest.fixture(scope="session")
def s2_data():
    """Two-component normal Scenario-2 dataset, n = 600."""
    return generate_scenario(with_n(get_scenario("normal-s2-null"), 600), derive_rng(2024, 1))


@pytest.fixture(scope="session")
def logit_data():
    return generate_scenario(with_n(get_scenario("logistic-s2-null"), 800), derive_rng(2024, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
