import numpy as np
import pytest
from hypothesis import settings

from polarize.tensor_core import PhasePair

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def phases() -> PhasePair:
    return PhasePair(gamma1=1.0, gamma0=2.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
