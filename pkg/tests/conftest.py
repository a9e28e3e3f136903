import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def random_spd(gen, n, shift=1.0):
    a = gen.standard_normal((n, n))
    return a @ a.T + shift * np.eye(n)
