from collections.abc import Callable

import numpy as np
import pytest

from bounceVol import HPolytope, make_cube


def _random_polytope(rng: np.random.Generator, d: int, k: int) -> HPolytope:
    # a box keeps it bounded; the remaining facets are random with the origin inside
    A = rng.standard_normal((k, d))
    A[: 2 * d] = np.vstack([np.eye(d), -np.eye(d)])
    b = rng.uniform(0.5, 2.0, size=k)
    return HPolytope(A, b)


@pytest.fixture
def cube2() -> HPolytope:
    return make_cube(2)[0]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def random_polytope() -> Callable[[np.random.Generator, int, int], HPolytope]:
    return _random_polytope
