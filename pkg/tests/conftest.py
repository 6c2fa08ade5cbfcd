import numpy as np
import pytest

from qudit_qkd.config import Seeds, SessionConfig
from qudit_qkd.hilbert import builtin_mubs_16, qubit_mubs


@pytest.fixture(scope="session")
def family():
    return builtin_mubs_16()


@pytest.fixture(scope="session")
def qubit_family():
    return qubit_mubs()


@pytest.fixture(scope="session")
def all_masks(family):
    return [family.mask(b, k) for b in (0, 1) for k in range(16)]


@pytest.fixture
def ideal_config():
    return SessionConfig(Seeds(1, 2, 3), duration_cycles=100_000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
