import numpy as np
import pytest
from hypothesis import settings

from etainv.predictor import pattern_spec
from etainv.schedule import build_schedule

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def two_step():
    return build_schedule("explicit", 2, alphas=[0.9, 0.8])


@pytest.fixture
def sd50():
    return build_schedule("linear-beta", 50)


@pytest.fixture
def small_spec():
    return pattern_spec((6, 6))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
