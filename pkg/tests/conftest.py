import numpy as np
import pytest

from logic.array_geometry import FibrilArray, build_circle, build_square


@pytest.fixture
def pair():
    """Two identical fibrils three radii apart, C_i = 20/3."""
    return FibrilArray(np.array([[0.0, 0.0], [3.0, 0.0]]), 1.0, 5.0, 0.75)


@pytest.fixture
def small_circle():
    return build_circle(7.0, 3.0)


@pytest.fixture
def small_square():
    return build_square(6.0, 3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_array(rng: np.random.Generator, n: int) -> FibrilArray:
    """n fibrils scattered on a jittered lattice, with random radii averaging 1."""
    side = int(np.ceil(np.sqrt(n)))
    ij = np.array([(i, j) for j in range(side) for i in range(side)][:n], dtype=float)
    positions = ij * 3.0 + rng.uniform(-0.2, 0.2, size=(n, 2))
    radius = rng.uniform(0.9, 1.1, size=n)
    radius /= radius.mean()
    return FibrilArray(positions, radius, 5.0, 0.75)
