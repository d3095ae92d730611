import pytest

from fillbox import ModelParams, SimConfig


@pytest.fixture
def fig():
    """Parameters of the published figures."""
    return ModelParams(alpha=0.3, beta=1.0, gamma=0.2, epsilon=0.01)


@pytest.fixture
def lf_params():
    """Same epidemic, capacity high enough that laissez-faire never breaches it."""
    return ModelParams(alpha=0.3, beta=1.0, gamma=0.99, epsilon=0.01)


@pytest.fixture
def cfg():
    return SimConfig()
