import numpy as np
import pytest

from densreg.measure import make_continuous, make_discrete, make_mixed
from densreg.bayes import density


@pytest.fixture
def discrete_measure():
    return make_discrete([(0.0, 1.0), (1.0, 1.0)])


@pytest.fixture
def continuous_measure():
    return make_continuous(0.0, 1.0, 100)


@pytest.fixture
def mixed_measure():
    return make_mixed(0.0, 1.0, [(0.0, 1.0), (1.0, 1.0)], 100)


def random_density(measure, rng, spread=1.0):
    """Random strictly positive density on the given measure."""
    logs = rng.normal(0.0, spread, size=measure.size)
    return density(measure, np.exp(logs))


def random_clr_direction(measure, rng):
    """Random zero-integral direction for the given measure."""
    v = rng.normal(size=measure.size)
    w = measure.weights
    return v - (v @ w) / w.sum()
