import numpy as np
import pytest

from carlate.data import build_dataset


def make_random_dataset(rng, n=90, n_strata=3, k=2, tau=2.0):
    """Small experiment with imperfect compliance and non-degenerate cells.

    Strata come in contiguous blocks, assignments alternate with a random
    phase so every cell has at least floor(block/2) units in each arm.
    """
    block = n // n_strata
    n = block * n_strata
    s = np.repeat(np.arange(n_strata), block)
    a = np.zeros(n, dtype=int)
    for st in range(n_strata):
        rows = np.flatnonzero(s == st)
        a[rows] = (np.arange(rows.size) + rng.integers(0, 2)) % 2
    x = rng.standard_normal((n, k)) if k else None
    d0 = (rng.random(n) < 0.2).astype(int)
    d1 = np.maximum(d0, (rng.random(n) < 0.75).astype(int))
    d = np.where(a == 1, d1, d0)
    slope = rng.standard_normal(k)
    y = 1.0 + (x @ slope if k else 0.0) + tau * d + 0.3 * s + rng.standard_normal(n)
    return build_dataset(y, d, a, s, x)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def dataset(rng):
    return make_random_dataset(rng)
