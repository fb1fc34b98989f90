import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from model.gompertz import panel_gompertz  # noqa: E402
from model.random_walk import panel_random_walk  # noqa: E402
from util.rng import Stream  # noqa: E402


@pytest.fixture
def gomp():
    return panel_gompertz(U=3, N=20, rng=7)


@pytest.fixture
def rw():
    return panel_random_walk(U=2, N=10, rng=3)


@pytest.fixture
def stream():
    return Stream(2024)
