import numpy as np
import pytest

from mesob.presets import get_preset


@pytest.fixture(scope="session")
def sec3():
    return get_preset("paper-sec3")


@pytest.fixture(scope="session")
def appb():
    return get_preset("paper-appB")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
