"""Shared helpers and fixtures for the test suite."""

import numpy as np
import pytest

from facereg.geometry import PointCloud, RigidTransform


def random_rotation(rng, max_angle_rad=np.pi):
    """Uniform random axis, angle up to max_angle_rad, as a matrix."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = rng.uniform(0.0, max_angle_rad)
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(ang) * K + (1.0 - np.cos(ang)) * (K @ K)


def random_transform(rng, max_angle_rad=np.pi, max_trans=500.0):
    R = random_rotation(rng, max_angle_rad)
    t = rng.uniform(-max_trans, max_trans, size=3)
    return RigidTransform(R, t)


def brute_force_nearest(points, q):
    """Reference nearest-neighbor: lowest index among exact-tie minima."""
    d = np.linalg.norm(points - np.asarray(q), axis=1)
    best = d.min()
    return int(np.nonzero(d == best)[0][0]), float(best)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_cloud(rng):
    return PointCloud(rng.uniform(-50.0, 50.0, size=(40, 3)))
