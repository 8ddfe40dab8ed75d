import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def correlated_binary():
    from infoleak.divergence import DiscreteJoint

    return DiscreteJoint(np.array([[0.5, 0.0], [0.0, 0.5]]))
