import numpy as np
import pytest

from bayes.regression import LinearSystem
from phantom.acquisition import HCP_BIG_DELTA, HCP_SMALL_DELTA, make_scheme
from phantom.tensors import single_tensor_phantom


@pytest.fixture
def constant_system():
    # y = (1..5) の定数モデル: mu = 3, nu = 4, sigma2_hat = 2.5
    return LinearSystem.ordinary(np.ones((5, 1)), np.arange(1.0, 6.0))


@pytest.fixture
def random_system():
    rng = np.random.default_rng(7)
    design = rng.normal(size=(20, 6))
    y = design @ rng.normal(size=6) + 0.1 * rng.normal(size=20)
    return LinearSystem.ordinary(design, y)


@pytest.fixture
def weighted_system():
    rng = np.random.default_rng(11)
    design = rng.normal(size=(15, 4))
    y = design @ rng.normal(size=4) + 0.2 * rng.normal(size=15)
    return LinearSystem(design, rng.uniform(0.5, 2.0, size=15), np.zeros((4, 4)), y)


@pytest.fixture
def shell_1000():
    return make_scheme([1000.0], [64], 1, small_delta=HCP_SMALL_DELTA, big_delta=HCP_BIG_DELTA)


@pytest.fixture
def shell_3000():
    return make_scheme([3000.0], [64], 1, small_delta=HCP_SMALL_DELTA, big_delta=HCP_BIG_DELTA)


@pytest.fixture
def phantom():
    return single_tensor_phantom()
