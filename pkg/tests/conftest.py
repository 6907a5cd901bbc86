import numpy as np
import pytest

from colormamba import tensor as T


@pytest.fixture(autouse=True)
def _float64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
