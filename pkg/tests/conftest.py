import numpy as np
import pytest

from splatalign.core import Camera, SplatCloud, random_rotation
from splatalign.sh import num_coeffs


def random_cloud(rng, n=50, degree=0, spread=0.3, center=(0.0, 0.0, 0.0), scale=(0.01, 0.04)):
    """Cloud of ``n`` random Gaussians around ``center``."""
    means = np.asarray(center) + rng.uniform(-spread, spread, size=(n, 3))
    quats = rng.normal(size=(n, 4))
    scales = rng.uniform(*scale, size=(n, 3))
    opac = rng.uniform(0.3, 0.95, size=n)
    sh = rng.normal(scale=0.3, size=(n, num_coeffs(degree), 3))
    return SplatCloud(means, quats, scales, opac, sh)


def single_splat(mean, opacity=0.999, scale=0.05, degree=0, color=0.0):
    sh = np.zeros((1, num_coeffs(degree), 3))
    sh[0, 0] = color
    return SplatCloud([mean], [[1.0, 0, 0, 0]], [[scale] * 3], [opacity], sh)


def axis_camera(width=64, height=48, f=60.0, R=None, t=None):
    return Camera(f, f, width / 2, height / 2, width, height,
                  np.eye(3) if R is None else R, np.zeros(3) if t is None else t)


def random_camera(rng, target=(0.0, 0.0, 0.0), dist=2.5, width=64, height=48, f=60.0):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    up = np.cross(d, rng.normal(size=3))
    return Camera.look_at(np.asarray(target) + dist * d, target, up / np.linalg.norm(up), f, f, width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rotation(rng):
    return random_rotation(rng)
