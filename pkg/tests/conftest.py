import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from intervene.gp import GpHyperparams, condition

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_model(rng, n=12, d=2, noise=None):
    """Random GP posterior on a smooth synthetic surface."""
    X = rng.uniform(-1.5, 1.5, size=(n, d))
    y = np.sin(1.5 * X).sum(axis=1) + 0.1 * rng.standard_normal(n)
    h = GpHyperparams(rng.uniform(0.4, 1.5, size=d), float(rng.uniform(0.5, 2.0)),
                      float(rng.uniform(0.01, 0.2) if noise is None else noise))
    return condition(X, y, h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
