import numpy as np
import pytest

from mflq import bundled_problem


@pytest.fixture(scope="session")
def classical():
    return bundled_problem("classical")


@pytest.fixture(scope="session")
def ex12():
    return bundled_problem("ex12")


@pytest.fixture(scope="session")
def discounting():
    return bundled_problem("discounting")


@pytest.fixture(scope="session")
def meanfield():
    return bundled_problem("meanfield")


@pytest.fixture
def rng():
    return np.random.default_rng(20240824)
