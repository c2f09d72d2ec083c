import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from returndensity.densities import ModelKind, make_params
from returndensity.mdp import build_cliff_walk

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cliff():
    return build_cliff_walk()


def random_params(kind, rng):
    kind = ModelKind.parse(kind)
    vals = [rng.uniform(-5, 5), rng.uniform(0.2, 3.0), rng.uniform(0.05, 0.95)]
    return make_params(kind, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
