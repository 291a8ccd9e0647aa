import numpy as np
import pytest

from ktsep.phantom import gen_coil_maps


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def cdot(a, b):
    """<a, b> = sum conj(a) b, computed independently of any operator code."""
    return complex(np.vdot(np.ravel(a), np.ravel(b)))


def random_maps(rng, *shape):
    raw = crandn(rng, *shape)
    return raw / np.sqrt(np.sum(np.abs(raw) ** 2, axis=-1, keepdims=True))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_row(rng):
    """A (PE=8, TIME=4) row problem with 3 coils and a sparse mask."""
    n, t, j = 8, 4, 3
    maps = gen_coil_maps(2, n, j, seed=5).data[0]
    mask = np.zeros((n, t), dtype=bool)
    mask[n // 2] = True
    for tt in range(t):
        mask[rng.choice(n, 2, replace=False), tt] = True
    x = crandn(rng, n, t)
    return x, maps, mask
