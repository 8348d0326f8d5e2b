import numpy as np
import pytest

from infxlap.exponent import exponent_from_family, gaussian_family
from infxlap.grid import make_domain


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture
def bump():
    return gaussian_family(2.0, 1.0, (0.5, 0.5), 0.25)


def unit_square(n):
    return make_domain(n, n, 1.0 / (n - 1))


@pytest.fixture
def square17():
    return unit_square(17)


@pytest.fixture
def bump17(square17, bump):
    return exponent_from_family(square17, bump)
