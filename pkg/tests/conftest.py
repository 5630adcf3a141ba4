import numpy as np
import pytest

from attndistill.data import build_toy_fixture


@pytest.fixture(scope="session")
def toy():
    train, test = build_toy_fixture()
    return train, test


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
