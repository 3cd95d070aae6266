import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_direction(grid, rng, modes=4):
    """Random smooth field built from a few low Fourier modes."""
    X = grid.mesh()
    L = grid.extents
    v = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.integers(1, 4, size=grid.dim)
        ph = rng.uniform(0, 2 * np.pi, size=grid.dim)
        term = rng.standard_normal()
        for a in range(grid.dim):
            term = term * np.cos(2 * np.pi * k[a] * X[a] / L[a] + ph[a])
        v += term
    return v
