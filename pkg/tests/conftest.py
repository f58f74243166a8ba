# tests/conftest.py
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from matfun import HurstOperator  # noqa: E402
from verify import TestConfig  # noqa: E402


@pytest.fixture
def scalar_D():
    return HurstOperator.from_matrix(0.75)


@pytest.fixture
def diagonal_D():
    return HurstOperator.from_matrix([[0.6, 0.0], [0.0, 0.9]])


@pytest.fixture
def coupled_D():
    """Non-commuting 2×2 operator used throughout the convergence checks."""
    return HurstOperator.from_matrix([[0.75, 0.2], [0.0, 0.6]])


@pytest.fixture
def jordan_D():
    return HurstOperator.from_matrix([[0.75, 1.0], [0.0, 0.75]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quick_config():
    return TestConfig(n_ladder=(64, 128, 256, 512), replications=4000)
