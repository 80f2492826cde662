import numpy as np
import pytest

from core.model import J2, linear, rotation, twowell


@pytest.fixture
def rot():
    return rotation(omega=1.0)


@pytest.fixture
def wells():
    return twowell(omega=1.0, beta=0.3)


@pytest.fixture
def sheared():
    return linear(2.0 * np.eye(2), J2 + 0.4 * np.eye(2))
