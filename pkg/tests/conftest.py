import numpy as np
import pytest

from nudgefit.core import NudgeConfig, ObservationOperator
from nudgefit.toy import scalar_model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scalar():
    """The 1-D model u' = -lambda u + 1 with full observation and mu = 10."""
    model = scalar_model()
    obs = ObservationOperator.full(1)
    return model, obs, NudgeConfig.uniform(10.0, obs)


@pytest.fixture(scope="session")
def rbc_cache(request):
    """Persistent directory for spun-up convection snapshots."""
    return request.config.cache.mkdir("nudgefit-rbc")
