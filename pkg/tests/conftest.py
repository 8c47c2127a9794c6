import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from worldmem.geometry import CameraIntrinsics, Pose6DoF, UnitQuaternion

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_quaternion(rng: np.random.Generator) -> UnitQuaternion:
    return UnitQuaternion(*rng.normal(size=4))


def random_pose(rng: np.random.Generator, box: float = 10.0) -> Pose6DoF:
    return Pose6DoF(rng.uniform(-box, box, 3), random_quaternion(rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def intr():
    return CameraIntrinsics(math.radians(70.0), 16.0 / 9.0, 0.5, 8.0)
