import numpy as np
import pytest

from byup.yett import YettCopula

# 3 x 4 worked example used by the proposal tests (0-based cells)
G_EXAMPLE = np.array([
    [1, 1, 4, 2],
    [2, 4, 1, 1],
    [3, 1, 1, 3],
]) / 24.0

GRE_Z1 = [(0, 2), (1, 3), (2, 1)]
GRE_Z2 = [(0, 1), (1, 2), (2, 3)]

VERTEX_EXAMPLE = np.array([
    [0, 1 / 12, 0, 1 / 4],
    [1 / 4, 1 / 12, 0, 0],
    [0, 1 / 12, 1 / 4, 0],
])


@pytest.fixture
def g_example():
    return YettCopula(G_EXAMPLE)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_copula(k, rng, steps=200):
    """A yett-uniform copula reached by random rectangle exchanges from independence."""
    from byup.proposals import Geometry, exchange_step

    geo = Geometry(k)
    w = np.full(int(np.prod(k)), 1.0 / np.prod(k))
    for _ in range(steps):
        exchange_step(w, geo, rng)
    return YettCopula(w.reshape(k))
