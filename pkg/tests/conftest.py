import numpy as np
import pytest

from sdsbm.graph_model import BlockSeries


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def make_series(counts, n=100, pair=("a", "a")) -> BlockSeries:
    return BlockSeries(pair=pair, n=n, counts=np.asarray(counts, dtype=float))
