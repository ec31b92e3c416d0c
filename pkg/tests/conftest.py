import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pxlap.exponent import make_exponent
from pxlap.mesh import make_mesh

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mesh1d():
    return make_mesh(1, [(0.0, 1.0)], 65)


@pytest.fixture(scope="session")
def mesh2d():
    return make_mesh(2, [(0.0, 1.0), (0.0, 1.0)], 17)


@pytest.fixture(scope="session")
def affine2d():
    return make_exponent("affine", [(0.0, 1.0), (0.0, 1.0)], p0=1.5, slope=1.0, direction=[1.0, 0.5])
