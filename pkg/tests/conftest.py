import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rrrfusion.dynamics import DynamicsParams
from rrrfusion.kinematics import RobotGeometry

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def geo():
    return RobotGeometry.symmetric()


@pytest.fixture(scope="session")
def params(geo):
    return DynamicsParams.default(geo)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_poses(n, seed=0, span=0.08, phi_span=0.3):
    r = np.random.default_rng(seed)
    out = np.empty((n, 3))
    out[:, :2] = r.uniform(-span, span, (n, 2))
    out[:, 2] = r.uniform(-phi_span, phi_span, n)
    return out
