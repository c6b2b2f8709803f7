import numpy as np
import pytest

from instinctnav.envsim import WorldConfig


@pytest.fixture
def world():
    return WorldConfig()


@pytest.fixture
def no_hazard_world():
    return WorldConfig(hazard_zones=())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
