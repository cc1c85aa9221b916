import numpy as np
import pytest
from hypothesis import settings

from hmaelab.p1geom import p1grid
from hmaelab.potential import build_phi, select_constants

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def grid65():
    return p1grid(4.0, 65)


@pytest.fixture(scope="session")
def example65(grid65):
    k = select_constants(grid65)
    return k, build_phi(grid65, k)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)
