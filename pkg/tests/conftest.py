import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pumpmap.emfield import CavitySpec, centered_on_ring, tune_ceiling

settings.register_profile("ci", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def reference_mode():
    """(tuned spec, ring-frame field map) of the reference cavity."""
    spec, fmap = tune_ceiling(CavitySpec())
    return spec, centered_on_ring(fmap, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
