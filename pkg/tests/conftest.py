import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ouswitch import chain as chain_mod


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def two_state():
    """lambda01 = 1, lambda10 = 2: pi = (2/3, 1/3), E|I_j| = 3/2."""
    return chain_mod.validate_rates([[0.0, 1.0], [2.0, 0.0]])
